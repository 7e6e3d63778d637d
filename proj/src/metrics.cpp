#include "dqmil/metrics.hpp"

#include "dqmil/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

namespace dqmil {

double auc(std::span<const double> scores, std::span<const std::uint16_t> labels, std::uint16_t positive)
{
    if (scores.size() != labels.size()) {
        throw DimensionError("auc: " + std::to_string(scores.size()) + " scores for " + std::to_string(labels.size()) +
                             " labels");
    }
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average ranks (1-based) over tie groups.
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) {
            ++j;
        }
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) {
            rank[order[t]] = avg;
        }
        i = j + 1;
    }
    double pos = 0.0;
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == positive) {
            pos += 1.0;
            rank_sum += rank[i];
        }
    }
    const double neg = static_cast<double>(n) - pos;
    if (pos == 0.0 || neg == 0.0) {
        throw UndefinedMetricError("auc needs at least one positive and one negative bag");
    }
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double auc_macro(const std::vector<std::vector<double>>& probs, std::span<const std::uint16_t> labels,
                 std::size_t classes)
{
    if (classes < 2) {
        throw ParameterError("auc_macro needs at least two classes");
    }
    auto column = [&](std::size_t k) {
        std::vector<double> s;
        s.reserve(probs.size());
        for (const auto& p : probs) {
            if (p.size() != classes) {
                throw DimensionError("auc_macro: probability row of width " + std::to_string(p.size()));
            }
            s.push_back(p[k]);
        }
        return s;
    };
    if (classes == 2) {
        return auc(column(1), labels, 1);
    }
    double total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
        total += auc(column(k), labels, static_cast<std::uint16_t>(k));
    }
    return total / static_cast<double>(classes);
}

std::size_t argmax(std::span<const double> p)
{
    if (p.empty()) {
        throw EmptyInputError("argmax of an empty vector");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i) {
        if (p[i] > p[best]) {
            best = i;
        }
    }
    return best;
}

double accuracy(std::span<const std::size_t> predictions, std::span<const std::uint16_t> labels)
{
    if (predictions.size() != labels.size()) {
        throw DimensionError("accuracy: prediction and label counts differ");
    }
    if (predictions.empty()) {
        throw EmptyInputError("accuracy over zero bags");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        correct += predictions[i] == labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

std::string EvalReport::to_json() const
{
    nlohmann::json j{{"auc", auc},
                     {"accuracy", accuracy},
                     {"bag_count", bag_count},
                     {"class_counts", class_counts},
                     {"confusion", confusion}};
    if (witness_recovery) {
        j["witness_recovery"] = *witness_recovery;
        j["witness_baseline"] = *witness_baseline;
    }
    return j.dump();
}

std::string EvalReport::to_table(const std::vector<std::string>& class_names) const
{
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "bags      %zu\nauc       %.4f\naccuracy  %.4f\n", bag_count, auc, accuracy);
    os << line;
    if (witness_recovery) {
        std::snprintf(line, sizeof line, "witness   %.4f (uniform %.4f, ratio %.2f)\n", *witness_recovery,
                      *witness_baseline, *witness_recovery / *witness_baseline);
        os << line;
    }
    os << "confusion (rows true, columns predicted)\n";
    for (std::size_t k = 0; k < confusion.size(); ++k) {
        const std::string name = k < class_names.size() ? class_names[k] : std::to_string(k);
        std::snprintf(line, sizeof line, "  %-12s", name.c_str());
        os << line;
        for (std::size_t c : confusion[k]) {
            std::snprintf(line, sizeof line, " %6zu", c);
            os << line;
        }
        os << '\n';
    }
    return os.str();
}

EvalReport summarize(const std::vector<BagPrediction>& predictions, const Dataset& dataset)
{
    const std::size_t classes = dataset.class_count();
    EvalReport r;
    r.bag_count = predictions.size();
    r.class_counts.assign(classes, 0);
    r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));

    std::vector<std::vector<double>> probs;
    std::vector<std::uint16_t> labels;
    std::vector<std::size_t> predicted;
    for (const auto& p : predictions) {
        if (p.label >= classes) {
            throw LabelError("bag '" + p.id + "' has label " + std::to_string(p.label));
        }
        probs.push_back(p.output.p);
        labels.push_back(p.label);
        predicted.push_back(argmax(p.output.p));
        ++r.class_counts[p.label];
        ++r.confusion[p.label][predicted.back()];
    }
    r.accuracy = accuracy(predicted, labels);
    r.auc = auc_macro(probs, labels, classes);

    std::vector<std::vector<double>> attention;
    std::vector<std::vector<bool>> flags;
    bool flagged = true;
    for (std::size_t i = 0; i < predictions.size() && i < dataset.bags.size(); ++i) {
        const auto& bag = dataset.bags[i];
        if (bag.label == 0) {
            continue;
        }
        if (!bag.witness) {
            flagged = false;
            break;
        }
        attention.push_back(predictions[i].output.attention);
        flags.push_back(*bag.witness);
    }
    if (flagged && !attention.empty()) {
        try {
            const auto w = witness_recovery(attention, flags);
            r.witness_recovery = w.recovery;
            r.witness_baseline = w.baseline;
        } catch (const UndefinedMetricError&) {
        }
    }
    return r;
}

template <typename T>
Evaluation evaluate(const DQModel<T>& model, const Dataset& dataset, std::size_t workers)
{
    if (dataset.bags.empty()) {
        throw EmptyInputError("evaluation over an empty dataset");
    }
    Evaluation ev;
    ev.predictions.resize(dataset.bags.size());
    auto run = [&](std::size_t first, std::size_t stride) {
        for (std::size_t i = first; i < dataset.bags.size(); i += stride) {
            const auto& bag = dataset.bags[i];
            ev.predictions[i] = {bag.id, bag.label, model.infer(bag.embeddings<T>(dataset.sources))};
        }
    };
    workers = std::clamp<std::size_t>(workers, 1, dataset.bags.size());
    if (workers == 1) {
        run(0, 1);
    } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    run(w, workers);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
        for (auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    }
    ev.report = summarize(ev.predictions, dataset);
    return ev;
}

template Evaluation evaluate<float>(const DQModel<float>&, const Dataset&, std::size_t);
template Evaluation evaluate<double>(const DQModel<double>&, const Dataset&, std::size_t);

std::vector<double> normalize_attention(std::span<const double> raw)
{
    if (raw.empty()) {
        throw EmptyInputError("attention normalization over zero instances");
    }
    if (raw.size() == 1) {
        return {1.0};
    }
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    const double range = *hi - *lo;
    std::vector<double> out(raw.size(), 0.0);
    if (range > 0.0) {
        for (std::size_t i = 0; i < raw.size(); ++i) {
            out[i] = (raw[i] - *lo) / range;
        }
    }
    return out;
}

AttentionExport export_attention(const std::string& bag_id, std::span<const double> raw)
{
    AttentionExport e;
    e.bag_id = bag_id;
    e.raw.assign(raw.begin(), raw.end());
    e.normalized = normalize_attention(raw);
    for (double s : e.normalized) {
        e.mask.push_back(s > kHighlightThreshold);
    }
    return e;
}

void write_attention_csv(const AttentionExport& e, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "index,raw,normalized,flagged\n";
    char line[96];
    for (std::size_t i = 0; i < e.raw.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%d\n", i, e.raw[i], e.normalized[i], e.mask[i] ? 1 : 0);
        out << line;
    }
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

void write_attention_pgm(const AttentionExport& e, const std::filesystem::path& path, std::size_t height)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "P5\n" << e.normalized.size() << ' ' << height << "\n255\n";
    std::string row;
    for (double s : e.normalized) {
        row.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(s, 0.0, 1.0) * 255.0))));
    }
    for (std::size_t r = 0; r < height; ++r) {
        out << row;
    }
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

WitnessRecovery witness_recovery(const std::vector<std::vector<double>>& attention,
                                 const std::vector<std::vector<bool>>& flags)
{
    if (attention.size() != flags.size()) {
        throw DimensionError("witness_recovery: attention and flag counts differ");
    }
    WitnessRecovery w;
    for (std::size_t b = 0; b < attention.size(); ++b) {
        if (attention[b].size() != flags[b].size()) {
            throw AlignmentError("witness_recovery: bag " + std::to_string(b) + " has " +
                                 std::to_string(attention[b].size()) + " scores for " +
                                 std::to_string(flags[b].size()) + " flags");
        }
        std::size_t witnesses = 0;
        double mass = 0.0;
        for (std::size_t i = 0; i < flags[b].size(); ++i) {
            if (flags[b][i]) {
                ++witnesses;
                mass += attention[b][i];
            }
        }
        if (witnesses == 0) {
            continue;
        }
        w.recovery += mass;
        w.baseline += static_cast<double>(witnesses) / static_cast<double>(flags[b].size());
        ++w.bags;
    }
    if (w.bags == 0) {
        throw UndefinedMetricError("witness_recovery needs at least one bag with witnesses");
    }
    w.recovery /= static_cast<double>(w.bags);
    w.baseline /= static_cast<double>(w.bags);
    return w;
}

double attention_entropy(std::span<const double> log_a)
{
    double h = 0.0;
    for (double l : log_a) {
        if (std::isfinite(l)) {
            h -= std::exp(l) * l;
        }
    }
    return h;
}

} // namespace dqmil
