// Copyright 2026 the dmsc authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Detection metrics. Cavg follows the language-recognition convention:
// every ordered language pair (target, nontarget) is scored by the
// max-score rule restricted to the pair, with ties broken toward reject,
// and the pairwise costs P_tgt*P_miss + (1-P_tgt)*P_fa are averaged. EER
// pools all (utterance, language) detection trials and interpolates the
// ROC linearly between the operating corners bracketing the miss = fa
// crossing. Both metrics depend only on the score ordering.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dmsc/data_io.hpp"
#include "dmsc/kvconfig.hpp"
#include "dmsc/model.hpp"

namespace dmsc {

/// Per-trial classifier scores: one row per utterance, one column per
/// language, plus ground-truth column indices.
struct ScoreTable {
    std::vector<std::string> languages;
    std::vector<std::string> utt_ids;
    std::vector<int> truth;  // indexes into languages
    Tensor scores;           // [num_utts x num_langs]

    std::size_t num_utts() const { return truth.size(); }
    std::size_t num_langs() const { return languages.size(); }

    void validate() const {
        if (languages.empty() || truth.empty()) {
            throw DimError("score table needs at least one language and one utterance");
        }
        if (scores.rank() != 2 || scores.rows() != truth.size() ||
            scores.cols() != languages.size()) {
            throw DimError("score matrix " + scores.shape_str() + " does not match " +
                           std::to_string(truth.size()) + " utterances x " +
                           std::to_string(languages.size()) + " languages");
        }
        if (utt_ids.size() != truth.size()) {
            throw DimError("utterance id column length mismatch");
        }
        for (int t : truth) {
            if (t < 0 || static_cast<std::size_t>(t) >= languages.size()) {
                throw DimError("truth label " + std::to_string(t) + " indexes no language column");
            }
        }
        if (!scores.all_finite()) throw NumericError("score table holds non-finite values");
    }
};

/// Pairwise detection costs; cavg is the mean of the off-diagonal entries.
struct CavgResult {
    double cavg = 0.0;
    Tensor pair_costs;  // [L x L], diagonal zero
};

inline CavgResult compute_cavg(const ScoreTable& table, double p_target = 0.5) {
    table.validate();
    const std::size_t langs = table.num_langs();
    std::vector<std::size_t> trials(langs, 0);
    for (int t : table.truth) ++trials[static_cast<std::size_t>(t)];
    std::string missing;
    for (std::size_t l = 0; l < langs; ++l) {
        if (trials[l] == 0) missing += (missing.empty() ? "" : ", ") + table.languages[l];
    }
    if (!missing.empty()) {
        throw Error("cavg is undefined: language(s) with zero trials: " + missing);
    }
    if (langs < 2) throw Error("cavg needs at least two languages");

    CavgResult result;
    result.pair_costs = Tensor({langs, langs});
    double total = 0.0;
    for (std::size_t t = 0; t < langs; ++t) {
        for (std::size_t n = 0; n < langs; ++n) {
            if (t == n) continue;
            std::size_t misses = 0, false_alarms = 0;
            for (std::size_t u = 0; u < table.num_utts(); ++u) {
                const double st = table.scores.at(u, t);
                const double sn = table.scores.at(u, n);
                if (static_cast<std::size_t>(table.truth[u]) == t) {
                    // Restricted-pair decision; ties reject the target.
                    if (st <= sn) ++misses;
                } else if (static_cast<std::size_t>(table.truth[u]) == n) {
                    if (st > sn) ++false_alarms;
                }
            }
            const double p_miss = static_cast<double>(misses) / static_cast<double>(trials[t]);
            const double p_fa =
                static_cast<double>(false_alarms) / static_cast<double>(trials[n]);
            const double cost = p_target * p_miss + (1.0 - p_target) * p_fa;
            result.pair_costs.at(t, n) = cost;
            total += cost;
        }
    }
    result.cavg = total / static_cast<double>(langs * (langs - 1));
    return result;
}

/// Equal error rate in percent over the pooled detection trials.
inline double compute_eer_percent(const ScoreTable& table) {
    table.validate();
    struct Trial {
        double score;
        bool target;
    };
    std::vector<Trial> pooled;
    pooled.reserve(table.num_utts() * table.num_langs());
    std::size_t num_targets = 0;
    for (std::size_t u = 0; u < table.num_utts(); ++u) {
        for (std::size_t l = 0; l < table.num_langs(); ++l) {
            const bool target = static_cast<std::size_t>(table.truth[u]) == l;
            pooled.push_back({table.scores.at(u, l), target});
            if (target) ++num_targets;
        }
    }
    const std::size_t num_nontargets = pooled.size() - num_targets;
    if (num_targets == 0 || num_nontargets == 0) {
        throw Error("eer is undefined: need both target and nontarget trials");
    }

    std::sort(pooled.begin(), pooled.end(),
              [](const Trial& a, const Trial& b) { return a.score > b.score; });

    // Operating corners: distinct false-alarm rates with the lowest miss rate
    // reachable at each. fa grows and miss shrinks as the threshold drops.
    struct Corner {
        double fa, miss;
    };
    std::vector<Corner> corners;
    corners.push_back({0.0, 1.0});
    std::size_t detected_targets = 0, detected_nontargets = 0;
    std::size_t i = 0;
    while (i < pooled.size()) {
        std::size_t j = i;
        while (j < pooled.size() && pooled[j].score == pooled[i].score) {
            if (pooled[j].target) ++detected_targets;
            else ++detected_nontargets;
            ++j;
        }
        const double fa =
            static_cast<double>(detected_nontargets) / static_cast<double>(num_nontargets);
        const double miss = 1.0 - static_cast<double>(detected_targets) /
                                      static_cast<double>(num_targets);
        if (!corners.empty() && corners.back().fa == fa) {
            corners.back().miss = std::min(corners.back().miss, miss);
        } else {
            corners.push_back({fa, miss});
        }
        i = j;
    }

    // miss - fa decreases strictly along corners, so the sign change is
    // unique; interpolate the bracketing segment to the miss = fa diagonal.
    for (std::size_t k = 0; k + 1 < corners.size(); ++k) {
        const double d0 = corners[k].miss - corners[k].fa;
        const double d1 = corners[k + 1].miss - corners[k + 1].fa;
        if (d0 == 0.0) return 100.0 * corners[k].fa;
        if (d0 > 0.0 && d1 <= 0.0) {
            const double t = d0 / (d0 - d1);
            return 100.0 * (corners[k].fa + t * (corners[k + 1].fa - corners[k].fa));
        }
    }
    const Corner& last = corners.back();
    return 100.0 * 0.5 * (last.fa + last.miss);
}

struct MetricReport {
    double cavg = 0.0;
    double eer_percent = 0.0;
    Tensor pair_costs;
    std::vector<std::string> languages;
    std::size_t num_utts = 0;

    KvDoc to_kv() const {
        KvDoc doc;
        doc.set_double("metrics.cavg", cavg);
        doc.set_double("metrics.eer_percent", eer_percent);
        doc.set_int("metrics.num_utterances", static_cast<std::int64_t>(num_utts));
        doc.set_int("metrics.num_languages", static_cast<std::int64_t>(languages.size()));
        for (std::size_t t = 0; t < languages.size(); ++t) {
            for (std::size_t n = 0; n < languages.size(); ++n) {
                if (t == n) continue;
                doc.set_double("metrics.pair_cost." + languages[t] + "." + languages[n],
                               pair_costs.at(t, n));
            }
        }
        return doc;
    }

    std::string to_table() const {
        std::ostringstream os;
        os << std::fixed << std::setprecision(4);
        os << "Cavg: " << cavg << "\nEER:  " << eer_percent << "%\n";
        os << "pairwise costs (rows = target, cols = nontarget):\n";
        os << std::setw(12) << "";
        for (const auto& l : languages) os << std::setw(12) << l;
        os << "\n";
        for (std::size_t t = 0; t < languages.size(); ++t) {
            os << std::setw(12) << languages[t];
            for (std::size_t n = 0; n < languages.size(); ++n) {
                if (t == n) {
                    os << std::setw(12) << "-";
                } else {
                    os << std::setw(12) << pair_costs.at(t, n);
                }
            }
            os << "\n";
        }
        return os.str();
    }
};

inline MetricReport evaluate_scores(const ScoreTable& table) {
    MetricReport report;
    const auto cavg = compute_cavg(table);
    report.cavg = cavg.cavg;
    report.pair_costs = cavg.pair_costs;
    report.eer_percent = compute_eer_percent(table);
    report.languages = table.languages;
    report.num_utts = table.num_utts();
    return report;
}

/// Full-length softmax scoring of every utterance, no segmentation. Rows
/// sum to one. Scoring is pure and parallelizes over utterances.
inline ScoreTable score_dataset(const Model& model, const std::vector<FeatureSequence>& dataset,
                                std::size_t norm_window = 300, std::size_t threads = 1,
                                double cosine_scale = 30.0) {
    if (dataset.empty()) throw Error("cannot score an empty dataset");
    ScoreTable table;
    const std::size_t langs = model.config().num_classes;
    for (std::size_t l = 0; l < langs; ++l) table.languages.push_back("lang" + std::to_string(l));
    table.truth.resize(dataset.size());
    table.utt_ids.resize(dataset.size());
    table.scores = Tensor({dataset.size(), langs});

    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (;;) {
            const std::size_t u = next.fetch_add(1);
            if (u >= dataset.size()) return;
            const auto& seq = dataset[u];
            Tensor feats = norm_window > 0 ? sliding_mean_norm(seq.features, norm_window)
                                           : seq.features;
            auto probs = softmax(
                model.logits(constant(std::move(feats)), RunContext::inference(), cosine_scale));
            table.utt_ids[u] = seq.id;
            table.truth[u] = seq.label;
            for (std::size_t l = 0; l < langs; ++l)
                table.scores.at(u, l) = probs->value.at(l);
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    table.validate();
    return table;
}

/// Restricts a table to a language subset, renormalizing each row over the
/// kept columns. Utterances whose truth lies outside the subset are dropped.
inline ScoreTable restrict_to_subset(const ScoreTable& table,
                                     const std::vector<std::size_t>& keep) {
    table.validate();
    if (keep.size() < 2) throw ConfigError("language subset needs at least two languages");
    std::vector<int> new_index(table.num_langs(), -1);
    ScoreTable out;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i] >= table.num_langs()) {
            throw ConfigError("subset language index " + std::to_string(keep[i]) +
                              " out of range");
        }
        new_index[keep[i]] = static_cast<int>(i);
        out.languages.push_back(table.languages[keep[i]]);
    }
    std::vector<std::vector<double>> rows;
    for (std::size_t u = 0; u < table.num_utts(); ++u) {
        const int mapped = new_index[static_cast<std::size_t>(table.truth[u])];
        if (mapped < 0) continue;
        std::vector<double> row(keep.size());
        double total = 0.0;
        for (std::size_t i = 0; i < keep.size(); ++i) {
            row[i] = table.scores.at(u, keep[i]);
            total += row[i];
        }
        if (total <= 0) total = 1.0;
        for (double& v : row) v /= total;
        rows.push_back(std::move(row));
        out.truth.push_back(mapped);
        out.utt_ids.push_back(table.utt_ids[u]);
    }
    if (rows.empty()) throw Error("no utterances left after restricting to the subset");
    out.scores = Tensor({rows.size(), keep.size()});
    for (std::size_t u = 0; u < rows.size(); ++u)
        for (std::size_t l = 0; l < keep.size(); ++l) out.scores.at(u, l) = rows[u][l];
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// CSV serialization: header of language names, then per row utterance id,
// truth language, and one score column per language.
// ---------------------------------------------------------------------------

inline void write_score_csv(const std::string& path, const ScoreTable& table) {
    table.validate();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "utterance,truth";
    for (const auto& l : table.languages) out << "," << l;
    out << "\n";
    out << std::setprecision(17);
    for (std::size_t u = 0; u < table.num_utts(); ++u) {
        out << table.utt_ids[u] << ","
            << table.languages[static_cast<std::size_t>(table.truth[u])];
        for (std::size_t l = 0; l < table.num_langs(); ++l) out << "," << table.scores.at(u, l);
        out << "\n";
    }
}

inline ScoreTable read_score_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty score csv");
    ScoreTable table;
    {
        std::istringstream header(line);
        std::string cell;
        std::getline(header, cell, ',');
        std::getline(header, cell, ',');
        while (std::getline(header, cell, ',')) table.languages.push_back(cell);
    }
    if (table.languages.empty()) throw FormatError(path + ": header names no languages");
    std::map<std::string, int> lang_index;
    for (std::size_t l = 0; l < table.languages.size(); ++l)
        lang_index[table.languages[l]] = static_cast<int>(l);

    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream cells(line);
        std::string id, truth_name, cell;
        std::getline(cells, id, ',');
        std::getline(cells, truth_name, ',');
        const auto it = lang_index.find(truth_name);
        if (it == lang_index.end()) {
            throw FormatError(path + ": line " + std::to_string(line_no) +
                              " names unknown language '" + truth_name + "'");
        }
        std::vector<double> row;
        while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != table.languages.size()) {
            throw FormatError(path + ": line " + std::to_string(line_no) + " has " +
                              std::to_string(row.size()) + " scores, expected " +
                              std::to_string(table.languages.size()));
        }
        table.utt_ids.push_back(id);
        table.truth.push_back(it->second);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw FormatError(path + ": no score rows");
    table.scores = Tensor({rows.size(), table.languages.size()});
    for (std::size_t u = 0; u < rows.size(); ++u)
        for (std::size_t l = 0; l < table.languages.size(); ++l)
            table.scores.at(u, l) = rows[u][l];
    table.validate();
    return table;
}

}  // namespace dmsc
