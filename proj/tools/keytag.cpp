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

#include "keytag/config.hpp"
#include "keytag/errors.hpp"
#include "keytag/evaluate.hpp"
#include "keytag/model.hpp"
#include "keytag/topics.hpp"
#include "keytag/train.hpp"
#include "keytag/verify.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

namespace keytag {

namespace {

// Leftover args become config overrides: `--key value` or `--key=value`.
std::vector<std::pair<std::string, std::string>> overrides_from(
    const std::vector<std::string>& extras) {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        std::string key = extras[i];
        if (key.rfind("--", 0) != 0 || key.size() <= 2) {
            throw ConfigError("cli: expected --key value overrides, got '" +
                              key + "'");
        }
        key.erase(0, 2);
        const auto equals = key.find('=');
        if (equals != std::string::npos) {
            overrides.emplace_back(key.substr(0, equals),
                                   key.substr(equals + 1));
            continue;
        }
        if (i + 1 == extras.size()) {
            throw ConfigError("cli: override '--" + key +
                              "' is missing a value");
        }
        overrides.emplace_back(key, extras[++i]);
    }
    return overrides;
}

void require_key(const std::string& value, const std::string& key,
                 const std::string& command) {
    if (value.empty()) {
        throw ConfigError(command + ": config key '" + key +
                          "' is required");
    }
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) {
        throw DataError("cannot create directory '" + path +
                        "': " + ec.message());
    }
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << content;
    if (!out) throw DataError("write to '" + path + "' failed");
}

std::string fixed4(double value) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.4f", value);
    return buffer;
}

std::vector<TaggedDocument> load_labeled_corpus(const std::string& path) {
    return parse_conll(read_text_file(path));
}

void maybe_attach_embeddings(std::vector<TaggedDocument>& docs,
                             const RunConfig& config,
                             const std::string& command) {
    if (!config.encoder.use_precomputed) return;
    require_key(config.embeddings, "embeddings", command);
    attach_embeddings(docs, parse_embeddings(read_text_file(config.embeddings)));
}

Prediction predict_corpus(const Model& model,
                          const std::vector<TaggedDocument>& docs,
                          int batch_size) {
    Prediction all;
    const std::vector<const TaggedDocument*> pointers = doc_pointers(docs);
    for (std::size_t offset = 0; offset < pointers.size();
         offset += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(
            pointers.size(), offset + static_cast<std::size_t>(batch_size));
        std::vector<const TaggedDocument*> chunk(
            pointers.begin() + static_cast<std::ptrdiff_t>(offset),
            pointers.begin() + static_cast<std::ptrdiff_t>(end));
        EncodedBatch batch =
            encode_batch(chunk, model.vocab,
                         std::vector<int>(chunk.size(), 0), model.kc_map,
                         model.n_domains);
        Prediction part = predict(model, batch);
        for (auto& seq : part.ki) all.ki.push_back(std::move(seq));
        for (auto& seq : part.kc) all.kc.push_back(std::move(seq));
    }
    return all;
}

// --------------------------------------------------------------------------

int cmd_topics(const RunConfig& config) {
    require_key(config.train_corpus, "train_corpus", "topics");
    require_key(config.output_dir, "output_dir", "topics");

    std::vector<TaggedDocument> docs =
        load_labeled_corpus(config.train_corpus);
    Vocabulary vocab = build_vocab(docs, config.min_count);
    BowMatrix bow = build_bow(docs, vocab);
    TopicModelFit fit = fit_topics(bow, config.topics);
    std::vector<int> labels = assign_domains(fit);

    ensure_dir(config.output_dir);
    const std::string domains_path = config.output_dir + "/domains.tsv";
    const std::string model_path = config.output_dir + "/topics.ckpt";
    save_domains(fit.doc_ids, labels, domains_path);
    save_topics(fit, model_path);

    std::cout << "K " << fit.k << "\n";
    std::vector<long long> counts(static_cast<std::size_t>(fit.k), 0);
    for (int label : labels) counts[static_cast<std::size_t>(label)] += 1;
    for (int k = 0; k < fit.k; ++k) {
        std::cout << "domain " << k << ": " << counts[k] << " documents\n";
    }
    std::cout << "wrote " << domains_path << "\n";
    std::cout << "wrote " << model_path << "\n";
    return exit_code::ok;
}

int cmd_train(const RunConfig& config) {
    require_key(config.train_corpus, "train_corpus", "train");
    require_key(config.domains_path, "domains", "train");
    require_key(config.output_dir, "output_dir", "train");
    if (config.types.empty()) {
        throw ConfigError("train: config key 'types' is required");
    }

    std::vector<TaggedDocument> docs =
        load_labeled_corpus(config.train_corpus);
    std::vector<TaggedDocument> dev;
    if (!config.dev_corpus.empty()) {
        dev = load_labeled_corpus(config.dev_corpus);
    }
    maybe_attach_embeddings(docs, config, "train");
    maybe_attach_embeddings(dev, config, "train");

    const std::map<std::string, int> domains =
        load_domains(config.domains_path);
    int n_domains = 0;
    for (const auto& [doc_id, label] : domains) {
        n_domains = std::max(n_domains, label + 1);
    }
    if (n_domains == 0) {
        throw DataError("train: domains file '" + config.domains_path +
                        "' is empty");
    }

    Vocabulary vocab = build_vocab(docs, config.min_count);
    KcLabelMap kc_map{config.types};
    Rng rng{config.seed};
    Model model =
        build_model(config.encoder, vocab, kc_map, n_domains, rng);

    ensure_dir(config.output_dir);
    const std::string metrics_path = config.output_dir + "/metrics.tsv";
    std::ofstream metrics(metrics_path, std::ios::binary);
    if (!metrics) throw DataError("cannot write '" + metrics_path + "'");

    TrainResult result = train(model, docs, domains, dev, config.train,
                               config.output_dir, &metrics);

    for (const EpochLog& log : result.log) {
        std::cout << format_metric_line(log) << "\n";
    }
    if (!dev.empty() && result.best_epoch > 0) {
        std::cout << "best epoch " << result.best_epoch << " dev_KIC_F1 "
                  << fixed4(result.best_dev_kic) << "\n";
    }
    std::cout << "wrote " << metrics_path << "\n";
    std::cout << "wrote " << config.output_dir << "/final.ckpt\n";
    return exit_code::ok;
}

int cmd_eval(const RunConfig& config) {
    require_key(config.checkpoint, "checkpoint", "eval");
    require_key(config.test_corpus, "test_corpus", "eval");

    Model model = load_model(config.checkpoint);
    if (!config.types.empty() && !(KcLabelMap{config.types} == model.kc_map)) {
        throw CheckpointError(
            "eval: checkpoint was trained with a different type inventory "
            "than the configured 'types'");
    }
    std::vector<TaggedDocument> docs =
        load_labeled_corpus(config.test_corpus);
    maybe_attach_embeddings(docs, config, "eval");

    EvalResult result =
        evaluate_model(model, docs, config.train.batch_size);
    std::cout << format_report(result);
    if (!config.output_dir.empty()) {
        ensure_dir(config.output_dir);
        const std::string tsv_path = config.output_dir + "/report.tsv";
        write_file(tsv_path, format_report_tsv(result));
        std::cout << "wrote " << tsv_path << "\n";
    }
    return exit_code::ok;
}

int cmd_predict(const RunConfig& config) {
    require_key(config.checkpoint, "checkpoint", "predict");
    require_key(config.test_corpus, "test_corpus", "predict");

    Model model = load_model(config.checkpoint);
    std::vector<TaggedDocument> docs =
        parse_conll_lenient(read_text_file(config.test_corpus));
    maybe_attach_embeddings(docs, config, "predict");

    Prediction prediction =
        predict_corpus(model, docs, config.train.batch_size);

    // Normalize each prediction to strict BIO with one type per span (the
    // same majority vote evaluation applies), so the output parses back.
    std::vector<TaggedDocument> tagged;
    long long total_spans = 0;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        const int length = static_cast<int>(docs[d].length());
        std::vector<std::string> kc_names;
        kc_names.reserve(docs[d].length());
        for (int id : prediction.kc[d]) {
            kc_names.push_back(model.kc_map.name(id));
        }
        const std::vector<TypedSpan> spans =
            typed_spans(prediction.ki[d], kc_names);
        std::vector<std::pair<int, int>> ranges;
        for (const TypedSpan& span : spans) {
            ranges.emplace_back(span.start, span.end);
        }
        TaggedDocument out;
        out.doc_id = docs[d].doc_id;
        out.tokens = docs[d].tokens;
        for (int tag : spans_to_bio(ranges, length)) {
            out.ki_tags.push_back(static_cast<Bio>(tag));
        }
        out.kc_tags.assign(docs[d].length(), "O");
        for (const TypedSpan& span : spans) {
            for (int t = span.start; t < span.end; ++t) {
                out.kc_tags[static_cast<std::size_t>(t)] = span.type;
            }
        }
        total_spans += static_cast<long long>(spans.size());
        tagged.push_back(std::move(out));
    }

    const std::string text = serialize_conll(tagged);
    if (config.output_dir.empty()) {
        std::cout << text;
    } else {
        ensure_dir(config.output_dir);
        const std::string out_path = config.output_dir + "/predictions.conll";
        write_file(out_path, text);
        std::cout << "tagged " << docs.size() << " documents, "
                  << total_spans << " spans\n";
        std::cout << "wrote " << out_path << "\n";
    }
    return exit_code::ok;
}

int cmd_verify(const std::string& tamper) {
    VerifyOptions options;
    options.tamper = tamper;
    const std::vector<CheckResult> results = run_verification(options);
    int failed = 0;
    for (const CheckResult& result : results) {
        std::cout << format_check_line(result) << "\n";
        if (!result.passed) ++failed;
    }
    if (failed == 0) {
        std::cout << "all " << results.size() << " checks passed\n";
        return exit_code::ok;
    }
    std::cout << failed << " of " << results.size() << " checks failed\n";
    return exit_code::verification_failure;
}

} // namespace
} // namespace keytag

int main(int argc, char** argv) {
    using namespace keytag;

    CLI::App app{"keyphrase tagger with topic-model domain adaptation and "
                 "adversarial training"};
    app.require_subcommand(1);

    std::string config_path;
    std::string tamper;

    auto add_run_command = [&](const std::string& name,
                               const std::string& description) {
        CLI::App* sub = app.add_subcommand(name, description);
        sub->add_option("--config", config_path,
                        "key = value run configuration file")
            ->required();
        sub->allow_extras();
        return sub;
    };
    CLI::App* topics_cmd = add_run_command(
        "topics", "fit a topic model and write pseudo-domain labels");
    CLI::App* train_cmd = add_run_command(
        "train", "train the tagger with domain-adversarial objectives");
    CLI::App* eval_cmd =
        add_run_command("eval", "score a checkpoint on a labeled corpus");
    CLI::App* predict_cmd =
        add_run_command("predict", "tag a corpus with a trained checkpoint");
    CLI::App* verify_cmd = app.add_subcommand(
        "verify", "run the built-in property checks and report margins");
    verify_cmd->add_option("--tamper", tamper,
                           "test hook: damage state before checking");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_code::ok : exit_code::config_error;
    }

    try {
        if (verify_cmd->parsed()) return cmd_verify(tamper);
        CLI::App* active = topics_cmd->parsed()    ? topics_cmd
                           : train_cmd->parsed()   ? train_cmd
                           : eval_cmd->parsed()    ? eval_cmd
                           : predict_cmd->parsed() ? predict_cmd
                                                   : nullptr;
        if (active == nullptr) {
            throw ConfigError("cli: no command selected");
        }
        const RunConfig config = load_run_config(
            config_path, overrides_from(active->remaining()));
        if (active == topics_cmd) return cmd_topics(config);
        if (active == train_cmd) return cmd_train(config);
        if (active == eval_cmd) return cmd_eval(config);
        return cmd_predict(config);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return exit_code::data_error;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_code::config_error;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return exit_code::numeric_error;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return exit_code::checkpoint_mismatch;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code::verification_failure;
    }
}
