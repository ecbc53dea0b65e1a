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

#include "keytag/topics.hpp"

#include "keytag/errors.hpp"
#include "keytag/rng.hpp"
#include "keytag/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

namespace keytag {

namespace {

constexpr double k_lsa_tolerance = 1e-10;
constexpr int k_lsa_max_iterations = 20000;
constexpr double k_rank_threshold = 1e-9;
constexpr double k_nmf_guard = 1e-12;

Tensor tensor_from(const RowMajorMatrix& m) {
    Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    t.as_2d() = m;
    return t;
}

void check_positive(int value, const char* what) {
    if (value < 1) {
        throw ConfigError(std::string(what) + " must be at least 1, got " +
                          std::to_string(value));
    }
}

} // namespace

TopicKind topic_kind_from_string(const std::string& name) {
    if (name == "lda") return TopicKind::lda;
    if (name == "lsa") return TopicKind::lsa;
    if (name == "nmf") return TopicKind::nmf;
    if (name == "kmeans") return TopicKind::kmeans;
    throw ConfigError("unknown topic model kind '" + name +
                      "' (expected lda, lsa, nmf or kmeans)");
}

std::string topic_kind_name(TopicKind kind) {
    switch (kind) {
    case TopicKind::lda: return "lda";
    case TopicKind::lsa: return "lsa";
    case TopicKind::nmf: return "nmf";
    case TopicKind::kmeans: return "kmeans";
    }
    throw ConfigError("invalid topic kind value");
}

BowMatrix build_bow(const std::vector<TaggedDocument>& docs,
                    const Vocabulary& vocab) {
    if (docs.empty()) {
        throw DataError("bow: empty corpus");
    }
    BowMatrix bow;
    bow.values = RowMajorMatrix::Zero(static_cast<Eigen::Index>(docs.size()),
                                      vocab.size());
    bow.doc_ids.reserve(docs.size());
    bow.tokens = vocab.real_tokens();
    for (std::size_t d = 0; d < docs.size(); ++d) {
        bow.doc_ids.push_back(docs[d].doc_id);
        if (docs[d].tokens.empty()) {
            throw DataError("bow: document '" + docs[d].doc_id +
                            "' has no tokens");
        }
        for (const std::string& token : docs[d].tokens) {
            bow.values(static_cast<Eigen::Index>(d), vocab.id(token)) += 1.0;
        }
    }
    return bow;
}

Eigen::VectorXd idf_weights(const RowMajorMatrix& counts) {
    const double n_docs = static_cast<double>(counts.rows());
    Eigen::VectorXd idf(counts.cols());
    for (Eigen::Index w = 0; w < counts.cols(); ++w) {
        const double df = (counts.col(w).array() > 0.0).count();
        idf[w] = std::log((1.0 + n_docs) / (1.0 + df)) + 1.0;
    }
    return idf;
}

RowMajorMatrix apply_tfidf(const RowMajorMatrix& counts,
                           const Eigen::VectorXd& idf) {
    if (idf.size() != counts.cols()) {
        throw ConfigError("tfidf: idf length " + std::to_string(idf.size()) +
                          " does not match " + std::to_string(counts.cols()) +
                          " columns");
    }
    return counts.array().rowwise() * idf.transpose().array();
}

// ---------------------------------------------------------------------------
// LDA, collapsed Gibbs sampling.

namespace {

struct GibbsState {
    // One entry per token occurrence: word id and current topic.
    std::vector<int> words;
    std::vector<int> doc_of;
    std::vector<int> topics;
    // Count arrays maintained incrementally and audited by the observer.
    RowMajorMatrix n_dk;
    RowMajorMatrix n_kw;
    Eigen::VectorXd n_k;
    Eigen::VectorXd n_d;
};

GibbsState init_gibbs(const RowMajorMatrix& counts, int k, Rng& rng) {
    GibbsState st;
    st.n_dk = RowMajorMatrix::Zero(counts.rows(), k);
    st.n_kw = RowMajorMatrix::Zero(k, counts.cols());
    st.n_k = Eigen::VectorXd::Zero(k);
    st.n_d = Eigen::VectorXd::Zero(counts.rows());
    for (Eigen::Index d = 0; d < counts.rows(); ++d) {
        for (Eigen::Index w = 0; w < counts.cols(); ++w) {
            const long long reps = static_cast<long long>(counts(d, w));
            for (long long r = 0; r < reps; ++r) {
                const int topic = rng.uniform_int(k);
                st.words.push_back(static_cast<int>(w));
                st.doc_of.push_back(static_cast<int>(d));
                st.topics.push_back(topic);
                st.n_dk(d, topic) += 1.0;
                st.n_kw(topic, w) += 1.0;
                st.n_k[topic] += 1.0;
                st.n_d[d] += 1.0;
            }
        }
    }
    return st;
}

// One full sweep. When phi_frozen is set, the topic-word factor comes from
// the fixed matrix instead of the evolving counts (fold-in mode).
void gibbs_sweep(GibbsState& st, int k, double alpha, double beta,
                 double vocab_size, Rng& rng,
                 const RowMajorMatrix* phi_frozen) {
    std::vector<double> weights(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < st.words.size(); ++i) {
        const int w = st.words[i];
        const int d = st.doc_of[i];
        const int old_topic = st.topics[i];
        st.n_dk(d, old_topic) -= 1.0;
        st.n_k[old_topic] -= 1.0;
        if (phi_frozen == nullptr) {
            st.n_kw(old_topic, w) -= 1.0;
        }
        double total = 0.0;
        for (int t = 0; t < k; ++t) {
            const double doc_part = st.n_dk(d, t) + alpha;
            const double word_part =
                phi_frozen != nullptr
                    ? (*phi_frozen)(t, w)
                    : (st.n_kw(t, w) + beta) / (st.n_k[t] + vocab_size * beta);
            weights[static_cast<std::size_t>(t)] = doc_part * word_part;
            total += weights[static_cast<std::size_t>(t)];
        }
        if (!(total > 0.0) || !std::isfinite(total)) {
            throw NumericError("lda: degenerate sampling weights");
        }
        const double draw = rng.uniform() * total;
        double cumulative = 0.0;
        int new_topic = k - 1;
        for (int t = 0; t < k; ++t) {
            cumulative += weights[static_cast<std::size_t>(t)];
            if (draw < cumulative) {
                new_topic = t;
                break;
            }
        }
        st.topics[i] = new_topic;
        st.n_dk(d, new_topic) += 1.0;
        st.n_k[new_topic] += 1.0;
        if (phi_frozen == nullptr) {
            st.n_kw(new_topic, w) += 1.0;
        }
    }
}

} // namespace

TopicModelFit fit_lda(const BowMatrix& bow, int k, double alpha, double beta,
                      int iterations, unsigned long long seed,
                      const LdaObserver& observer) {
    if (k < 2) {
        throw ConfigError("lda: k must be at least 2, got " +
                          std::to_string(k));
    }
    if (!(alpha > 0.0) || !(beta > 0.0)) {
        throw ConfigError("lda: alpha and beta must be positive");
    }
    check_positive(iterations, "lda: iterations");
    if (bow.values.rows() == 0 || bow.values.sum() <= 0.0) {
        throw DataError("lda: empty corpus");
    }
    if (k > bow.values.rows()) {
        std::cerr << "warning: lda: k=" << k << " exceeds the "
                  << bow.values.rows() << "-document corpus\n";
    }
    const Eigen::Index n_docs = bow.values.rows();
    const Eigen::Index n_words = bow.values.cols();
    Rng rng(seed);
    GibbsState st = init_gibbs(bow.values, k, rng);
    for (int it = 0; it < iterations; ++it) {
        gibbs_sweep(st, k, alpha, beta, static_cast<double>(n_words), rng,
                    nullptr);
        if (observer) {
            GibbsStats stats;
            stats.iteration = it;
            stats.doc_topic_total = static_cast<long long>(st.n_dk.sum());
            stats.topic_word_total = static_cast<long long>(st.n_kw.sum());
            observer(stats);
        }
    }

    TopicModelFit fit;
    fit.kind = TopicKind::lda;
    fit.k = k;
    fit.seed = seed;
    fit.alpha = alpha;
    fit.beta = beta;
    fit.iterations = iterations;
    fit.doc_ids = bow.doc_ids;
    fit.tokens = bow.tokens;
    fit.theta = RowMajorMatrix(n_docs, k);
    for (Eigen::Index d = 0; d < n_docs; ++d) {
        const double denom = st.n_d[d] + k * alpha;
        for (int t = 0; t < k; ++t) {
            fit.theta(d, t) = (st.n_dk(d, t) + alpha) / denom;
        }
    }
    fit.phi = RowMajorMatrix(k, n_words);
    for (int t = 0; t < k; ++t) {
        const double denom =
            st.n_k[t] + static_cast<double>(n_words) * beta;
        for (Eigen::Index w = 0; w < n_words; ++w) {
            fit.phi(t, w) = (st.n_kw(t, w) + beta) / denom;
        }
    }
    return fit;
}

// ---------------------------------------------------------------------------
// LSA, orthogonal iteration on the Gram matrix.

namespace {

// Modified Gram-Schmidt, in place, with a second projection pass: one pass
// leaves O(1) relative overlap when a column is nearly parallel to an
// earlier one (cancellation), two passes push it down to rounding level.
// Columns that vanish outright are replaced by fresh random directions so
// the iteration can continue; their Rayleigh quotients stay near zero and
// trip the rank check later.
void orthonormalize(RowMajorMatrix& q, Rng& rng) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index i = 0; i < j; ++i) {
                q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
            }
        }
        double norm = q.col(j).norm();
        if (norm < 1e-150) {
            for (Eigen::Index r = 0; r < q.rows(); ++r) {
                q(r, j) = rng.uniform(-1.0, 1.0);
            }
            for (int pass = 0; pass < 2; ++pass) {
                for (Eigen::Index i = 0; i < j; ++i) {
                    q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
                }
            }
            norm = q.col(j).norm();
            if (norm < 1e-150) {
                throw NumericError("lsa: orthonormalization failed");
            }
        }
        q.col(j) /= norm;
    }
}

} // namespace

TopicModelFit fit_lsa(const BowMatrix& bow, int k) {
    check_positive(k, "lsa: k");
    const Eigen::Index n_docs = bow.values.rows();
    const Eigen::Index n_words = bow.values.cols();
    if (k > std::min(n_docs, n_words)) {
        throw ConfigError("lsa: k=" + std::to_string(k) +
                          " exceeds matrix dimensions " +
                          std::to_string(n_docs) + "x" +
                          std::to_string(n_words));
    }
    const RowMajorMatrix& x = bow.values;
    // Work on the smaller Gram matrix; both sides share nonzero spectrum.
    const bool doc_side = n_docs <= n_words;
    const RowMajorMatrix gram =
        doc_side ? RowMajorMatrix(x * x.transpose())
                 : RowMajorMatrix(x.transpose() * x);

    Rng rng(0x15a0f17ULL); // fixed: fit_lsa has no seed parameter
    RowMajorMatrix q(gram.rows(), k);
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
        for (Eigen::Index c = 0; c < q.cols(); ++c) {
            q(r, c) = rng.uniform(-1.0, 1.0);
        }
    }
    orthonormalize(q, rng);

    Eigen::VectorXd eigenvalues = Eigen::VectorXd::Zero(k);
    bool converged = false;
    for (int it = 0; it < k_lsa_max_iterations; ++it) {
        RowMajorMatrix z = gram * q;
        Eigen::VectorXd next(k);
        for (int j = 0; j < k; ++j) {
            next[j] = q.col(j).dot(z.col(j)); // Rayleigh quotient
        }
        const double scale = std::max(1.0, next.cwiseAbs().maxCoeff());
        const bool settled =
            it > 0 && (next - eigenvalues).cwiseAbs().maxCoeff() <=
                          k_lsa_tolerance * scale;
        eigenvalues = next;
        q = z;
        orthonormalize(q, rng);
        if (settled) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw NumericError("lsa: orthogonal iteration did not converge");
    }

    // Order columns by descending eigenvalue.
    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return eigenvalues[a] > eigenvalues[b];
    });
    RowMajorMatrix q_sorted(q.rows(), k);
    Eigen::VectorXd sigma(k);
    for (int j = 0; j < k; ++j) {
        q_sorted.col(j) = q.col(order[static_cast<std::size_t>(j)]);
        sigma[j] = std::sqrt(
            std::max(0.0, eigenvalues[order[static_cast<std::size_t>(j)]]));
    }
    // Rank deficiency is judged on the Gram eigenvalue scale; square roots
    // would lift rounding noise above any reasonable threshold.
    const double lead = eigenvalues[order[0]];
    const double tail = eigenvalues[order[static_cast<std::size_t>(k - 1)]];
    if (!(lead > 0.0) || tail < k_rank_threshold * lead) {
        throw ConfigError("lsa: k=" + std::to_string(k) +
                          " exceeds the effective rank of the matrix");
    }

    TopicModelFit fit;
    fit.kind = TopicKind::lsa;
    fit.k = k;
    fit.doc_ids = bow.doc_ids;
    fit.tokens = bow.tokens;
    fit.singular_values = sigma;
    if (doc_side) {
        // q_sorted holds left singular vectors U.
        fit.theta = q_sorted * sigma.asDiagonal();
        fit.phi = sigma.cwiseInverse().asDiagonal() *
                  RowMajorMatrix(q_sorted.transpose() * x);
    } else {
        // q_sorted holds right singular vectors V.
        fit.phi = q_sorted.transpose();
        fit.theta = x * q_sorted;
    }
    return fit;
}

// ---------------------------------------------------------------------------
// NMF, multiplicative updates.

TopicModelFit fit_nmf(const BowMatrix& bow, int k, int iterations,
                      unsigned long long seed) {
    check_positive(k, "nmf: k");
    check_positive(iterations, "nmf: iterations");
    const RowMajorMatrix& x = bow.values;
    if (x.rows() == 0 || x.cols() == 0) {
        throw DataError("nmf: empty matrix");
    }
    if ((x.array() < 0.0).any()) {
        throw DataError("nmf: negative entries");
    }
    if (x.sum() <= 0.0) {
        throw DataError("nmf: all-zero matrix");
    }
    Rng rng(seed);
    RowMajorMatrix w(x.rows(), k);
    RowMajorMatrix h(k, x.cols());
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (int c = 0; c < k; ++c) {
            w(r, c) = rng.uniform(0.1, 1.1);
        }
    }
    for (int r = 0; r < k; ++r) {
        for (Eigen::Index c = 0; c < h.cols(); ++c) {
            h(r, c) = rng.uniform(0.1, 1.1);
        }
    }

    TopicModelFit fit;
    fit.kind = TopicKind::nmf;
    fit.k = k;
    fit.seed = seed;
    fit.iterations = iterations;
    fit.doc_ids = bow.doc_ids;
    fit.tokens = bow.tokens;
    fit.history.reserve(static_cast<std::size_t>(iterations));
    for (int it = 0; it < iterations; ++it) {
        const RowMajorMatrix wtx = w.transpose() * x;
        const RowMajorMatrix wtwh = w.transpose() * w * h;
        h.array() *= wtx.array() / (wtwh.array() + k_nmf_guard);
        const RowMajorMatrix xht = x * h.transpose();
        const RowMajorMatrix whht = w * (h * h.transpose());
        w.array() *= xht.array() / (whht.array() + k_nmf_guard);
        const double objective = (x - w * h).squaredNorm();
        if (!std::isfinite(objective)) {
            throw NumericError("nmf: objective diverged");
        }
        fit.history.push_back(objective);
    }
    fit.theta = w;
    fit.phi = h;
    return fit;
}

// ---------------------------------------------------------------------------
// K-Means, k-means++ then Lloyd.

namespace {

int nearest_centroid(const RowMajorMatrix& points, Eigen::Index row,
                     const RowMajorMatrix& centroids) {
    int best = 0;
    double best_dist = (points.row(row) - centroids.row(0)).squaredNorm();
    for (Eigen::Index c = 1; c < centroids.rows(); ++c) {
        const double dist =
            (points.row(row) - centroids.row(c)).squaredNorm();
        if (dist < best_dist) {
            best_dist = dist;
            best = static_cast<int>(c);
        }
    }
    return best;
}

RowMajorMatrix kmeanspp_init(const RowMajorMatrix& points, int k, Rng& rng) {
    const Eigen::Index n = points.rows();
    RowMajorMatrix centroids(k, points.cols());
    centroids.row(0) = points.row(rng.uniform_int(static_cast<int>(n)));
    Eigen::VectorXd dist2(n);
    for (Eigen::Index p = 0; p < n; ++p) {
        dist2[p] = (points.row(p) - centroids.row(0)).squaredNorm();
    }
    for (int c = 1; c < k; ++c) {
        const double total = dist2.sum();
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            const double draw = rng.uniform() * total;
            double cumulative = 0.0;
            chosen = n - 1;
            for (Eigen::Index p = 0; p < n; ++p) {
                cumulative += dist2[p];
                if (draw < cumulative) {
                    chosen = p;
                    break;
                }
            }
        } else {
            chosen = rng.uniform_int(static_cast<int>(n));
        }
        centroids.row(c) = points.row(chosen);
        for (Eigen::Index p = 0; p < n; ++p) {
            dist2[p] = std::min(
                dist2[p], (points.row(p) - centroids.row(c)).squaredNorm());
        }
    }
    return centroids;
}

} // namespace

TopicModelFit fit_kmeans(const RowMajorMatrix& vectors, int k, int max_iters,
                         unsigned long long seed) {
    check_positive(k, "kmeans: k");
    check_positive(max_iters, "kmeans: max_iters");
    const Eigen::Index n = vectors.rows();
    if (n == 0) {
        throw DataError("kmeans: empty matrix");
    }
    if (k > n) {
        throw ConfigError("kmeans: k=" + std::to_string(k) + " exceeds " +
                          std::to_string(n) + " points");
    }
    Rng rng(seed);
    RowMajorMatrix centroids = kmeanspp_init(vectors, k, rng);

    TopicModelFit fit;
    fit.kind = TopicKind::kmeans;
    fit.k = k;
    fit.seed = seed;
    fit.iterations = max_iters;
    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    std::vector<int> prev = assign;
    for (int it = 0; it < max_iters; ++it) {
        double inertia = 0.0;
        for (Eigen::Index p = 0; p < n; ++p) {
            assign[static_cast<std::size_t>(p)] =
                nearest_centroid(vectors, p, centroids);
            inertia += (vectors.row(p) -
                        centroids.row(assign[static_cast<std::size_t>(p)]))
                           .squaredNorm();
        }
        fit.history.push_back(inertia);
        if (assign == prev || it == max_iters - 1) {
            break;
        }
        prev = assign;
        // Update step with empty-cluster reseeding.
        RowMajorMatrix sums = RowMajorMatrix::Zero(k, vectors.cols());
        std::vector<int> members(static_cast<std::size_t>(k), 0);
        for (Eigen::Index p = 0; p < n; ++p) {
            sums.row(assign[static_cast<std::size_t>(p)]) += vectors.row(p);
            members[static_cast<std::size_t>(assign[static_cast<std::size_t>(
                p)])] += 1;
        }
        for (int c = 0; c < k; ++c) {
            if (members[static_cast<std::size_t>(c)] > 0) {
                centroids.row(c) =
                    sums.row(c) / members[static_cast<std::size_t>(c)];
            }
        }
        std::vector<bool> reseeded(static_cast<std::size_t>(n), false);
        for (int c = 0; c < k; ++c) {
            if (members[static_cast<std::size_t>(c)] > 0) {
                continue;
            }
            Eigen::Index farthest = 0;
            double far_dist = -1.0;
            for (Eigen::Index p = 0; p < n; ++p) {
                if (reseeded[static_cast<std::size_t>(p)]) {
                    continue;
                }
                const double dist =
                    (vectors.row(p) -
                     centroids.row(assign[static_cast<std::size_t>(p)]))
                        .squaredNorm();
                if (dist > far_dist) {
                    far_dist = dist;
                    farthest = p;
                }
            }
            centroids.row(c) = vectors.row(farthest);
            reseeded[static_cast<std::size_t>(farthest)] = true;
        }
    }

    fit.theta = RowMajorMatrix::Zero(n, k);
    for (Eigen::Index p = 0; p < n; ++p) {
        fit.theta(p, assign[static_cast<std::size_t>(p)]) = 1.0;
    }
    fit.phi = centroids;
    return fit;
}

// ---------------------------------------------------------------------------

std::vector<int> assign_domains(const TopicModelFit& fit) {
    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(fit.theta.rows()));
    for (Eigen::Index d = 0; d < fit.theta.rows(); ++d) {
        int best = 0;
        for (Eigen::Index t = 1; t < fit.theta.cols(); ++t) {
            if (fit.theta(d, t) > fit.theta(d, best)) {
                best = static_cast<int>(t);
            }
        }
        labels.push_back(best);
    }
    return labels;
}

RowMajorMatrix fold_in(const TopicModelFit& fit, const BowMatrix& new_bow,
                       unsigned long long seed) {
    if (new_bow.values.cols() != fit.phi.cols()) {
        throw DataError("fold-in: document matrix has " +
                        std::to_string(new_bow.values.cols()) +
                        " columns, topic model expects " +
                        std::to_string(fit.phi.cols()));
    }
    const Eigen::Index n_docs = new_bow.values.rows();
    switch (fit.kind) {
    case TopicKind::lda: {
        if (new_bow.values.sum() <= 0.0) {
            throw DataError("fold-in: empty documents");
        }
        Rng rng(seed);
        GibbsState st = init_gibbs(new_bow.values, fit.k, rng);
        for (int it = 0; it < fit.iterations; ++it) {
            gibbs_sweep(st, fit.k, fit.alpha, fit.beta,
                        static_cast<double>(fit.phi.cols()), rng, &fit.phi);
        }
        RowMajorMatrix theta(n_docs, fit.k);
        for (Eigen::Index d = 0; d < n_docs; ++d) {
            const double denom = st.n_d[d] + fit.k * fit.alpha;
            for (int t = 0; t < fit.k; ++t) {
                theta(d, t) = (st.n_dk(d, t) + fit.alpha) / denom;
            }
        }
        return theta;
    }
    case TopicKind::lsa: {
        RowMajorMatrix weighted = fit.idf.size() > 0
                                      ? apply_tfidf(new_bow.values, fit.idf)
                                      : new_bow.values;
        return weighted * fit.phi.transpose();
    }
    case TopicKind::nmf: {
        // Multiplicative updates on the loadings only, basis frozen.
        Rng rng(seed);
        RowMajorMatrix w(n_docs, fit.k);
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (int c = 0; c < fit.k; ++c) {
                w(r, c) = rng.uniform(0.1, 1.1);
            }
        }
        const RowMajorMatrix& h = fit.phi;
        const RowMajorMatrix hht = h * h.transpose();
        const int iters = std::max(fit.iterations, 1);
        for (int it = 0; it < iters; ++it) {
            const RowMajorMatrix xht = new_bow.values * h.transpose();
            const RowMajorMatrix whht = w * hht;
            w.array() *= xht.array() / (whht.array() + k_nmf_guard);
        }
        return w;
    }
    case TopicKind::kmeans: {
        RowMajorMatrix weighted = fit.idf.size() > 0
                                      ? apply_tfidf(new_bow.values, fit.idf)
                                      : new_bow.values;
        RowMajorMatrix theta = RowMajorMatrix::Zero(n_docs, fit.k);
        for (Eigen::Index d = 0; d < n_docs; ++d) {
            theta(d, nearest_centroid(weighted, d, fit.phi)) = 1.0;
        }
        return theta;
    }
    }
    throw ConfigError("fold-in: invalid topic kind");
}

TopicModelFit fit_topics(const BowMatrix& bow, const TopicConfig& config) {
    if (config.k < 1) {
        throw ConfigError("topics: k must be positive");
    }
    const double alpha =
        config.alpha > 0.0 ? config.alpha : 50.0 / config.k;
    switch (config.kind) {
    case TopicKind::lda:
        return fit_lda(bow, config.k, alpha, config.beta, config.iterations,
                       config.seed);
    case TopicKind::lsa: {
        BowMatrix weighted = bow;
        Eigen::VectorXd idf = idf_weights(bow.values);
        weighted.values = apply_tfidf(bow.values, idf);
        TopicModelFit fit = fit_lsa(weighted, config.k);
        fit.seed = config.seed;
        fit.idf = idf;
        return fit;
    }
    case TopicKind::nmf:
        return fit_nmf(bow, config.k, config.iterations, config.seed);
    case TopicKind::kmeans: {
        Eigen::VectorXd idf = idf_weights(bow.values);
        TopicModelFit fit = fit_kmeans(apply_tfidf(bow.values, idf),
                                       config.k, config.iterations,
                                       config.seed);
        fit.idf = idf;
        fit.doc_ids = bow.doc_ids;
        fit.tokens = bow.tokens;
        return fit;
    }
    }
    throw ConfigError("topics: invalid topic kind");
}

// ---------------------------------------------------------------------------
// Serialization.

namespace {
constexpr int k_topics_format_version = 1;
} // namespace

void save_topics(const TopicModelFit& fit, const std::string& path) {
    Container container("topics", k_topics_format_version);
    container.set("kind", topic_kind_name(fit.kind));
    container.set_int("k", fit.k);
    container.set_int("seed", static_cast<long long>(fit.seed));
    container.set_double("alpha", fit.alpha);
    container.set_double("beta", fit.beta);
    container.set_int("iterations", fit.iterations);
    for (const std::string& doc_id : fit.doc_ids) {
        container.set("doc", doc_id);
    }
    for (const std::string& token : fit.tokens) {
        container.set("token", token);
    }
    container.add_array("theta", tensor_from(fit.theta));
    container.add_array("phi", tensor_from(fit.phi));
    if (fit.idf.size() > 0) {
        Tensor idf({static_cast<int>(fit.idf.size())});
        for (Eigen::Index i = 0; i < fit.idf.size(); ++i) {
            idf[static_cast<std::size_t>(i)] = fit.idf[i];
        }
        container.add_array("idf", idf);
    }
    if (fit.singular_values.size() > 0) {
        Tensor sv({static_cast<int>(fit.singular_values.size())});
        for (Eigen::Index i = 0; i < fit.singular_values.size(); ++i) {
            sv[static_cast<std::size_t>(i)] = fit.singular_values[i];
        }
        container.add_array("singular_values", sv);
    }
    container.save_file(path);
}

TopicModelFit load_topics(const std::string& path) {
    Container container = Container::load_file(path, "topics");
    if (container.version() != k_topics_format_version) {
        throw CheckpointError("topics: unsupported format version " +
                              std::to_string(container.version()));
    }
    TopicModelFit fit;
    try {
        fit.kind = topic_kind_from_string(container.get("kind"));
    } catch (const ConfigError& err) {
        throw CheckpointError(std::string("topics: ") + err.what());
    }
    fit.k = static_cast<int>(container.get_int("k"));
    fit.seed = static_cast<unsigned long long>(container.get_int("seed"));
    fit.alpha = container.get_double("alpha");
    fit.beta = container.get_double("beta");
    fit.iterations = static_cast<int>(container.get_int("iterations"));
    fit.doc_ids = container.get_all("doc");
    fit.tokens = container.get_all("token");
    const Tensor& theta = container.array("theta");
    const Tensor& phi = container.array("phi");
    if (theta.rank() != 2 || phi.rank() != 2) {
        throw CheckpointError("topics: theta and phi must be rank-2 arrays");
    }
    fit.theta = theta.as_2d();
    fit.phi = phi.as_2d();
    if (fit.theta.cols() != fit.k || fit.phi.rows() != fit.k) {
        throw CheckpointError("topics: array shapes disagree with k");
    }
    if (fit.theta.rows() !=
        static_cast<Eigen::Index>(fit.doc_ids.size())) {
        throw CheckpointError("topics: theta rows disagree with doc ids");
    }
    if (container.has_array("idf")) {
        const Tensor& idf = container.array("idf");
        if (idf.rank() != 1 || idf.shape()[0] != fit.phi.cols()) {
            throw CheckpointError("topics: idf shape mismatch");
        }
        fit.idf.resize(idf.shape()[0]);
        for (Eigen::Index i = 0; i < fit.idf.size(); ++i) {
            fit.idf[i] = idf[static_cast<std::size_t>(i)];
        }
    }
    if (container.has_array("singular_values")) {
        const Tensor& sv = container.array("singular_values");
        if (sv.rank() != 1 || sv.shape()[0] != fit.k) {
            throw CheckpointError("topics: singular_values shape mismatch");
        }
        fit.singular_values.resize(fit.k);
        for (int i = 0; i < fit.k; ++i) {
            fit.singular_values[i] = sv[static_cast<std::size_t>(i)];
        }
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Domains file.

void save_domains(const std::vector<std::string>& doc_ids,
                  const std::vector<int>& labels, const std::string& path) {
    if (doc_ids.size() != labels.size()) {
        throw ConfigError("domains: " + std::to_string(doc_ids.size()) +
                          " doc ids vs " + std::to_string(labels.size()) +
                          " labels");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot open '" + path + "' for writing");
    }
    for (std::size_t i = 0; i < doc_ids.size(); ++i) {
        out << doc_ids[i] << '\t' << labels[i] << '\n';
    }
    if (!out) {
        throw DataError("failed writing '" + path + "'");
    }
}

std::map<std::string, int> load_domains(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path + "'");
    }
    std::map<std::string, int> domains;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) !=
                                            std::string::npos) {
            throw DataError("domains line " + std::to_string(line_no) +
                            ": expected `doc_id<TAB>label`");
        }
        const std::string doc_id = line.substr(0, tab);
        const std::string label_text = line.substr(tab + 1);
        int label = 0;
        try {
            std::size_t used = 0;
            label = std::stoi(label_text, &used);
            if (used != label_text.size()) {
                throw std::invalid_argument("trailing");
            }
        } catch (const std::exception&) {
            throw DataError("domains line " + std::to_string(line_no) +
                            ": invalid label '" + label_text + "'");
        }
        if (label < 0) {
            throw DataError("domains line " + std::to_string(line_no) +
                            ": negative label");
        }
        if (!domains.emplace(doc_id, label).second) {
            throw DataError("domains line " + std::to_string(line_no) +
                            ": duplicate doc id '" + doc_id + "'");
        }
    }
    if (domains.empty()) {
        throw DataError("domains file '" + path + "' is empty");
    }
    return domains;
}

} // namespace keytag
