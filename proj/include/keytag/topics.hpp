// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#ifndef KEYTAG_TOPICS_HPP
#define KEYTAG_TOPICS_HPP

#include "keytag/corpus.hpp"
#include "keytag/tensor.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace keytag {

enum class TopicKind { lda, lsa, nmf, kmeans };

TopicKind topic_kind_from_string(const std::string& name); // ConfigError
std::string topic_kind_name(TopicKind kind);

/// Document-word matrix over the full vocabulary id range. Column 0 (pad)
/// stays zero; unknown tokens count into column 1; every row has at least
/// one positive entry. values holds raw counts from build_bow and may be
/// reweighted (tf-idf) afterwards.
struct BowMatrix {
    RowMajorMatrix values;
    std::vector<std::string> doc_ids;
    std::vector<std::string> tokens; // real vocab tokens, column = 2 + index
};

BowMatrix build_bow(const std::vector<TaggedDocument>& docs,
                    const Vocabulary& vocab);

/// Smoothed inverse document frequencies: log((1+D)/(1+df)) + 1 per column.
Eigen::VectorXd idf_weights(const RowMajorMatrix& counts);
RowMajorMatrix apply_tfidf(const RowMajorMatrix& counts,
                           const Eigen::VectorXd& idf);

/// One fitted topic model. theta is the per-document topic representation
/// whose row argmax becomes the domain label; its meaning depends on kind
/// (LDA: probabilities, LSA: projections, NMF: loadings, KMEANS: one-hot).
/// phi maps topics to word space (LDA: distributions, LSA: right singular
/// directions, NMF: basis, KMEANS: centroids).
struct TopicModelFit {
    TopicKind kind = TopicKind::lda;
    int k = 0;
    unsigned long long seed = 0;
    double alpha = 0.0;
    double beta = 0.0;
    int iterations = 0;
    RowMajorMatrix theta;
    RowMajorMatrix phi;
    Eigen::VectorXd idf;             // lsa/kmeans preprocessing, else empty
    Eigen::VectorXd singular_values; // lsa only
    std::vector<double> history;     // nmf objective / kmeans inertia
    std::vector<std::string> doc_ids;
    std::vector<std::string> tokens;
};

/// Per-iteration Gibbs diagnostics; both totals are recomputed from the
/// count arrays so conservation violations cannot hide.
struct GibbsStats {
    int iteration = 0;
    long long doc_topic_total = 0;
    long long topic_word_total = 0;
};
using LdaObserver = std::function<void(const GibbsStats&)>;

/// Collapsed Gibbs sampling; theta/phi come from the final sample with the
/// usual smoothed count estimates.
TopicModelFit fit_lda(const BowMatrix& bow, int k, double alpha, double beta,
                      int iterations, unsigned long long seed,
                      const LdaObserver& observer = nullptr);

/// Rank-k truncated SVD of the (tf-idf weighted) matrix via orthogonal
/// iteration on the Gram matrix, tolerance 1e-10. theta = U*Sigma, phi rows
/// are right singular directions, singular values non-increasing.
TopicModelFit fit_lsa(const BowMatrix& bow, int k);

/// Multiplicative-update NMF under the Frobenius objective; the recorded
/// objective never increases by more than 1e-10 per iteration.
TopicModelFit fit_nmf(const BowMatrix& bow, int k, int iterations,
                      unsigned long long seed);

/// k-means++ seeding then Lloyd iterations; empty clusters reseed to the
/// point farthest from its centroid. theta is one-hot assignments.
TopicModelFit fit_kmeans(const RowMajorMatrix& vectors, int k, int max_iters,
                         unsigned long long seed);

/// label[d] = argmax_k theta[d][k], ties toward the smaller index.
std::vector<int> assign_domains(const TopicModelFit& fit);

/// Topic representation for documents that were not part of the fit, using
/// frozen topic parameters: LDA re-runs Gibbs with phi fixed, LSA projects,
/// NMF updates loadings only, KMEANS takes the nearest centroid. new_bow
/// must hold raw counts over the fit's vocabulary; tf-idf kinds reapply the
/// stored training idf.
RowMajorMatrix fold_in(const TopicModelFit& fit, const BowMatrix& new_bow,
                       unsigned long long seed);

/// Settings bundle for the pipeline entry point below.
struct TopicConfig {
    TopicKind kind = TopicKind::lda;
    int k = 5;
    double alpha = 0.0; // <= 0 means the 50/k default
    double beta = 0.01;
    int iterations = 500;
    unsigned long long seed = 0;
};

/// Dispatches on kind with the conventional preprocessing pairing: raw
/// counts for LDA and NMF, tf-idf for LSA and K-Means.
TopicModelFit fit_topics(const BowMatrix& bow, const TopicConfig& config);

void save_topics(const TopicModelFit& fit, const std::string& path);
TopicModelFit load_topics(const std::string& path);

/// Domains file: one `doc_id<TAB>label` line per document.
void save_domains(const std::vector<std::string>& doc_ids,
                  const std::vector<int>& labels, const std::string& path);
std::map<std::string, int> load_domains(const std::string& path);

} // namespace keytag

#endif // KEYTAG_TOPICS_HPP
