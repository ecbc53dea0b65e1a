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

#ifndef KEYTAG_CORPUS_HPP
#define KEYTAG_CORPUS_HPP

#include "keytag/tensor.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace keytag {

/// BIO tag for keyphrase identification. The integer values are the fixed
/// label ids used everywhere downstream: O=0, B=1, I=2.
enum class Bio : int { outside = 0, begin = 1, inside = 2 };

std::string bio_name(Bio tag);
constexpr int num_ki_labels = 3;

/// Tokenized document with per-token identification (BIO) and classification
/// (type) labels; the unit of ingestion. kc_tags holds "O" or a type name and
/// is "O" exactly where the BIO tag is O.
struct TaggedDocument {
    std::string doc_id;
    std::vector<std::string> tokens;
    std::vector<Bio> ki_tags;
    std::vector<std::string> kc_tags;
    std::optional<Tensor> precomputed; // [n_tokens, width]

    std::size_t length() const { return tokens.size(); }
    bool operator==(const TaggedDocument& other) const;
};

// Corpus file format: one token per line, `token<TAB>KI<TAB>KC`, an optional
// fourth column (ignored), blank line ends a document. A line of the form
// `#doc <id>` (no tabs) before a block names the document; unnamed documents
// get positional ids doc0, doc1, ...
std::vector<TaggedDocument> parse_conll(const std::string& text);
std::string serialize_conll(const std::vector<TaggedDocument>& docs);

// Accepts lines with only the token column and treats them as unlabeled
// (all-O). Used by the predict path; the strict three-column contract above is
// what training and evaluation consume.
std::vector<TaggedDocument> parse_conll_lenient(const std::string& text);

/// Token-string to id map with reserved ids 0 (padding) and 1 (unknown).
class Vocabulary {
  public:
    static constexpr int pad_id = 0;
    static constexpr int unknown_id = 1;

    Vocabulary();

    /// Id for a token; unknown tokens map to unknown_id.
    int id(const std::string& token) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }

    /// Appends a token with the next id. Rejected once frozen.
    int add(const std::string& token);

    /// Tokens with real ids (2..size), in id order. For serialization.
    std::vector<std::string> real_tokens() const;

  private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> ids_;
    bool frozen_ = false;
};

/// Tokens with corpus frequency >= min_count get ids in order of descending
/// frequency, ties broken lexicographically. The result is frozen.
Vocabulary build_vocab(const std::vector<TaggedDocument>& docs, int min_count);

/// Type-name to id map for the KC head: O=0, then the inventory in sorted
/// order. Stable across runs for a fixed inventory.
class KcLabelMap {
  public:
    KcLabelMap() = default;
    explicit KcLabelMap(const std::vector<std::string>& inventory);

    int id(const std::string& name) const; // DataError on unknown type
    const std::string& name(int id) const;
    int size() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }
    bool operator==(const KcLabelMap& other) const {
        return names_ == other.names_;
    }

  private:
    std::vector<std::string> names_;
    std::map<std::string, int> ids_;
};

/// Padded, masked batch. Labels at padded positions hold ignore_label;
/// real positions are exactly where mask is 1.
struct EncodedBatch {
    static constexpr int ignore_label = -1;

    Eigen::ArrayXXi token_ids;     // [batch, max_len]
    Eigen::ArrayXXi mask;          // [batch, max_len], 0/1
    Eigen::ArrayXXi ki_labels;     // [batch, max_len]
    Eigen::ArrayXXi kc_labels;     // [batch, max_len]
    Eigen::ArrayXi domain_labels;  // [batch]
    std::optional<Tensor> embeddings; // [batch, max_len, width]
    std::vector<std::string> doc_ids;
    std::vector<int> lengths;

    int batch_size() const { return static_cast<int>(token_ids.rows()); }
    int max_len() const { return static_cast<int>(token_ids.cols()); }
    int total_tokens() const;
};

/// Right-pads to the longest document. Every document needs a domain label
/// below n_domains; KC tags must come from the map's inventory.
EncodedBatch encode_batch(const std::vector<const TaggedDocument*>& docs,
                          const Vocabulary& vocab,
                          const std::vector<int>& domains,
                          const KcLabelMap& kc_map,
                          int n_domains);

std::vector<const TaggedDocument*> doc_pointers(
    const std::vector<TaggedDocument>& docs);

// Precomputed embeddings file: per document a header line
// `#doc <doc_id> <n_tokens> <width>` followed by n_tokens lines of width
// space-separated decimal floats.
std::map<std::string, Tensor> parse_embeddings(const std::string& text);

/// Attaches vectors to matching documents; token counts must agree and all
/// attached documents must share one width.
void attach_embeddings(std::vector<TaggedDocument>& docs,
                       const std::map<std::string, Tensor>& table);

} // namespace keytag

#endif // KEYTAG_CORPUS_HPP
