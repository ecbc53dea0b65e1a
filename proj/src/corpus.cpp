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

#include "keytag/corpus.hpp"

#include "keytag/errors.hpp"

#include <algorithm>
#include <sstream>

namespace keytag {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> fields;
    std::size_t begin = 0;
    while (true) {
        const std::size_t end = line.find(sep, begin);
        if (end == std::string::npos) {
            fields.push_back(line.substr(begin));
            return fields;
        }
        fields.push_back(line.substr(begin, end - begin));
        begin = end + 1;
    }
}

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    return line;
}

Bio parse_bio(const std::string& tag, int line_number) {
    if (tag == "O") return Bio::outside;
    if (tag == "B") return Bio::begin;
    if (tag == "I") return Bio::inside;
    throw DataError("line " + std::to_string(line_number) +
                    ": invalid KI tag '" + tag + "' (expected B, I or O)");
}

bool is_doc_marker(const std::string& line) {
    return line.rfind("#doc ", 0) == 0 && line.find('\t') == std::string::npos;
}

std::vector<TaggedDocument> parse_conll_impl(const std::string& text,
                                             bool allow_unlabeled) {
    std::vector<TaggedDocument> docs;
    TaggedDocument current;
    std::string pending_id;
    int line_number = 0;

    auto flush = [&]() {
        if (current.tokens.empty()) {
            return;
        }
        current.doc_id = pending_id.empty()
                             ? "doc" + std::to_string(docs.size())
                             : pending_id;
        pending_id.clear();
        docs.push_back(std::move(current));
        current = TaggedDocument{};
    };

    std::istringstream in{text};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_number;
        const std::string line = strip_cr(raw);
        if (line.empty()) {
            flush();
            continue;
        }
        if (is_doc_marker(line)) {
            flush();
            pending_id = line.substr(5);
            continue;
        }
        const std::vector<std::string> fields = split(line, '\t');
        std::string token;
        Bio ki = Bio::outside;
        std::string kc = "O";
        if (fields.size() == 1 && allow_unlabeled) {
            token = fields[0];
        } else {
            if (fields.size() < 3 || fields.size() > 4) {
                throw DataError("line " + std::to_string(line_number) +
                                ": expected 3 tab-separated columns, found " +
                                std::to_string(fields.size()));
            }
            token = fields[0];
            ki = parse_bio(fields[1], line_number);
            kc = fields[2];
        }
        if (ki == Bio::inside) {
            if (current.tokens.empty()) {
                throw DataError("line " + std::to_string(line_number) +
                                ": tag I cannot start a document (strict BIO)");
            }
            if (current.ki_tags.back() == Bio::outside) {
                throw DataError("line " + std::to_string(line_number) +
                                ": tag I cannot follow O (strict BIO)");
            }
        }
        const bool kc_outside = (kc == "O");
        if ((ki == Bio::outside) != kc_outside) {
            throw DataError("line " + std::to_string(line_number) +
                            ": KC tag '" + kc + "' inconsistent with KI tag '" +
                            bio_name(ki) + "' (KC must be O exactly when KI is O)");
        }
        current.tokens.push_back(token);
        current.ki_tags.push_back(ki);
        current.kc_tags.push_back(kc);
    }
    flush();
    return docs;
}

} // namespace

std::string bio_name(Bio tag) {
    switch (tag) {
    case Bio::outside: return "O";
    case Bio::begin: return "B";
    case Bio::inside: return "I";
    }
    return "?";
}

bool TaggedDocument::operator==(const TaggedDocument& other) const {
    return doc_id == other.doc_id && tokens == other.tokens &&
           ki_tags == other.ki_tags && kc_tags == other.kc_tags;
}

std::vector<TaggedDocument> parse_conll(const std::string& text) {
    return parse_conll_impl(text, false);
}

std::vector<TaggedDocument> parse_conll_lenient(const std::string& text) {
    return parse_conll_impl(text, true);
}

std::string serialize_conll(const std::vector<TaggedDocument>& docs) {
    std::ostringstream out;
    for (const TaggedDocument& doc : docs) {
        out << "#doc " << doc.doc_id << '\n';
        for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
            out << doc.tokens[i] << '\t' << bio_name(doc.ki_tags[i]) << '\t'
                << doc.kc_tags[i] << '\n';
        }
        out << '\n';
    }
    return out.str();
}

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>"} {}

int Vocabulary::id(const std::string& token) const {
    const auto it = ids_.find(token);
    return it == ids_.end() ? unknown_id : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) {
        throw DataError("vocabulary id " + std::to_string(id) +
                        " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::add(const std::string& token) {
    if (frozen_) {
        throw DataError("cannot add token to a frozen vocabulary");
    }
    const int new_id = size();
    tokens_.push_back(token);
    ids_.emplace(token, new_id);
    return new_id;
}

std::vector<std::string> Vocabulary::real_tokens() const {
    return {tokens_.begin() + 2, tokens_.end()};
}

Vocabulary build_vocab(const std::vector<TaggedDocument>& docs, int min_count) {
    if (min_count < 1) {
        throw ConfigError("min_count must be >= 1, got " +
                          std::to_string(min_count));
    }
    if (docs.empty()) {
        throw DataError("cannot build a vocabulary from an empty corpus");
    }
    std::map<std::string, std::int64_t> counts;
    for (const TaggedDocument& doc : docs) {
        for (const std::string& token : doc.tokens) {
            ++counts[token];
        }
    }
    std::vector<std::pair<std::string, std::int64_t>> kept;
    for (const auto& [token, count] : counts) {
        if (count >= min_count) {
            kept.emplace_back(token, count);
        }
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& [token, count] : kept) {
        vocab.add(token);
    }
    vocab.freeze();
    return vocab;
}

KcLabelMap::KcLabelMap(const std::vector<std::string>& inventory) {
    std::vector<std::string> sorted = inventory;
    std::sort(sorted.begin(), sorted.end());
    names_.push_back("O");
    for (const std::string& name : sorted) {
        if (name == "O") {
            throw ConfigError("type inventory may not contain 'O'");
        }
        if (ids_.contains(name)) {
            throw ConfigError("duplicate type '" + name + "' in inventory");
        }
        ids_.emplace(name, static_cast<int>(names_.size()));
        names_.push_back(name);
    }
    ids_.emplace("O", 0);
}

int KcLabelMap::id(const std::string& name) const {
    const auto it = ids_.find(name);
    if (it == ids_.end()) {
        throw DataError("KC type '" + name +
                        "' is not in the declared type inventory");
    }
    return it->second;
}

const std::string& KcLabelMap::name(int id) const {
    if (id < 0 || id >= size()) {
        throw DataError("KC label id " + std::to_string(id) + " out of range");
    }
    return names_[static_cast<std::size_t>(id)];
}

int EncodedBatch::total_tokens() const {
    int n = 0;
    for (const int len : lengths) {
        n += len;
    }
    return n;
}

EncodedBatch encode_batch(const std::vector<const TaggedDocument*>& docs,
                          const Vocabulary& vocab,
                          const std::vector<int>& domains,
                          const KcLabelMap& kc_map,
                          int n_domains) {
    if (docs.empty()) {
        throw DataError("cannot encode an empty batch");
    }
    if (domains.size() != docs.size()) {
        throw DataError("batch has " + std::to_string(docs.size()) +
                        " documents but " + std::to_string(domains.size()) +
                        " domain labels");
    }
    const int batch = static_cast<int>(docs.size());
    int max_len = 0;
    int embed_width = -1;
    int docs_with_embeddings = 0;
    for (const TaggedDocument* doc : docs) {
        max_len = std::max(max_len, static_cast<int>(doc->length()));
        if (doc->precomputed.has_value()) {
            ++docs_with_embeddings;
            const int width = doc->precomputed->dim(1);
            if (embed_width < 0) {
                embed_width = width;
            } else if (embed_width != width) {
                throw DataError("precomputed embedding widths differ within a "
                                "batch (" + std::to_string(embed_width) +
                                " vs " + std::to_string(width) + ")");
            }
        }
    }
    if (docs_with_embeddings > 0 && docs_with_embeddings != batch) {
        throw DataError("some documents in the batch lack precomputed "
                        "embeddings");
    }

    EncodedBatch out;
    out.token_ids = Eigen::ArrayXXi::Constant(batch, max_len, Vocabulary::pad_id);
    out.mask = Eigen::ArrayXXi::Zero(batch, max_len);
    out.ki_labels =
        Eigen::ArrayXXi::Constant(batch, max_len, EncodedBatch::ignore_label);
    out.kc_labels =
        Eigen::ArrayXXi::Constant(batch, max_len, EncodedBatch::ignore_label);
    out.domain_labels = Eigen::ArrayXi::Zero(batch);
    if (docs_with_embeddings == batch) {
        out.embeddings = Tensor::zeros({batch, max_len, embed_width});
    }

    for (int b = 0; b < batch; ++b) {
        const TaggedDocument& doc = *docs[static_cast<std::size_t>(b)];
        const int domain = domains[static_cast<std::size_t>(b)];
        if (domain < 0 || domain >= n_domains) {
            throw DataError("document '" + doc.doc_id + "' has domain label " +
                            std::to_string(domain) + " outside [0," +
                            std::to_string(n_domains) + ")");
        }
        out.domain_labels(b) = domain;
        out.doc_ids.push_back(doc.doc_id);
        out.lengths.push_back(static_cast<int>(doc.length()));
        for (int t = 0; t < static_cast<int>(doc.length()); ++t) {
            const std::size_t ti = static_cast<std::size_t>(t);
            out.token_ids(b, t) = vocab.id(doc.tokens[ti]);
            out.mask(b, t) = 1;
            out.ki_labels(b, t) = static_cast<int>(doc.ki_tags[ti]);
            out.kc_labels(b, t) = kc_map.id(doc.kc_tags[ti]);
            if (out.embeddings.has_value()) {
                const Tensor& vectors = *doc.precomputed;
                for (int w = 0; w < embed_width; ++w) {
                    (*out.embeddings)[(static_cast<std::int64_t>(b) * max_len + t) *
                                          embed_width +
                                      w] =
                        vectors[static_cast<std::int64_t>(t) * embed_width + w];
                }
            }
        }
    }
    return out;
}

std::vector<const TaggedDocument*> doc_pointers(
    const std::vector<TaggedDocument>& docs) {
    std::vector<const TaggedDocument*> out;
    out.reserve(docs.size());
    for (const TaggedDocument& doc : docs) {
        out.push_back(&doc);
    }
    return out;
}

std::map<std::string, Tensor> parse_embeddings(const std::string& text) {
    std::map<std::string, Tensor> table;
    std::istringstream in{text};
    std::string raw;
    int line_number = 0;
    while (std::getline(in, raw)) {
        ++line_number;
        const std::string line = strip_cr(raw);
        if (line.empty()) {
            continue;
        }
        std::istringstream header{line};
        std::string marker;
        std::string doc_id;
        int n_tokens = 0;
        int width = 0;
        header >> marker >> doc_id >> n_tokens >> width;
        if (marker != "#doc" || header.fail() || n_tokens < 1 || width < 1) {
            throw DataError("embeddings line " + std::to_string(line_number) +
                            ": expected '#doc <id> <n_tokens> <width>'");
        }
        if (table.contains(doc_id)) {
            throw DataError("embeddings file repeats document '" + doc_id + "'");
        }
        Tensor block{{n_tokens, width}};
        for (int t = 0; t < n_tokens; ++t) {
            if (!std::getline(in, raw)) {
                throw DataError("embeddings for document '" + doc_id +
                                "' end after " + std::to_string(t) + " of " +
                                std::to_string(n_tokens) + " rows");
            }
            ++line_number;
            std::istringstream row{strip_cr(raw)};
            for (int w = 0; w < width; ++w) {
                double v = 0.0;
                if (!(row >> v)) {
                    throw DataError("embeddings line " +
                                    std::to_string(line_number) + ": expected " +
                                    std::to_string(width) + " floats");
                }
                block[static_cast<std::int64_t>(t) * width + w] = v;
            }
            double extra = 0.0;
            if (row >> extra) {
                throw DataError("embeddings line " + std::to_string(line_number) +
                                ": more than " + std::to_string(width) +
                                " values");
            }
        }
        table.emplace(doc_id, std::move(block));
    }
    return table;
}

void attach_embeddings(std::vector<TaggedDocument>& docs,
                       const std::map<std::string, Tensor>& table) {
    int width = -1;
    for (TaggedDocument& doc : docs) {
        const auto it = table.find(doc.doc_id);
        if (it == table.end()) {
            continue;
        }
        const Tensor& block = it->second;
        if (block.dim(0) != static_cast<int>(doc.length())) {
            throw DataError("document '" + doc.doc_id + "' has " +
                            std::to_string(doc.length()) + " tokens but " +
                            std::to_string(block.dim(0)) +
                            " embedding rows");
        }
        if (width < 0) {
            width = block.dim(1);
        } else if (width != block.dim(1)) {
            throw DataError("embedding width changes across documents (" +
                            std::to_string(width) + " vs " +
                            std::to_string(block.dim(1)) + ")");
        }
        doc.precomputed = block;
    }
}

} // namespace keytag
