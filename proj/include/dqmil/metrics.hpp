#pragma once

#include "dqmil/data.hpp"
#include "dqmil/model.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dqmil {

/// Mann-Whitney AUC of `scores` for class `positive` against the rest.
/// Ties count one half. Throws UndefinedMetricError when either side is empty.
double auc(std::span<const double> scores, std::span<const std::uint16_t> labels, std::uint16_t positive = 1);

/// Binary AUC on p[:, 1] for K = 2, macro one-vs-rest otherwise.
double auc_macro(const std::vector<std::vector<double>>& probs, std::span<const std::uint16_t> labels,
                 std::size_t classes);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> p);

double accuracy(std::span<const std::size_t> predictions, std::span<const std::uint16_t> labels);

struct EvalReport {
    double auc = 0.0;
    double accuracy = 0.0;
    std::size_t bag_count = 0;
    std::vector<std::size_t> class_counts;
    /// confusion[true][predicted]
    std::vector<std::vector<std::size_t>> confusion;
    std::optional<double> witness_recovery;
    std::optional<double> witness_baseline;

    std::string to_json() const;
    std::string to_table(const std::vector<std::string>& class_names) const;
};

struct BagPrediction {
    std::string id;
    std::uint16_t label = 0;
    BagOutput output;
};

struct Evaluation {
    EvalReport report;
    std::vector<BagPrediction> predictions;
};

/// Runs inference over every bag with up to `workers` threads. Results are
/// stored per bag index, so they do not depend on the worker count.
template <typename T>
Evaluation evaluate(const DQModel<T>& model, const Dataset& dataset, std::size_t workers = 1);

/// Builds the report from finished predictions; witness fields are set when
/// every positive bag carries flags.
EvalReport summarize(const std::vector<BagPrediction>& predictions, const Dataset& dataset);

struct AttentionExport {
    std::string bag_id;
    std::vector<double> raw;
    std::vector<double> normalized;
    std::vector<bool> mask;
};

inline constexpr double kHighlightThreshold = 0.95;

/// Min-max scaling to [0, 1]. A single instance maps to 1; constant scores
/// over two or more instances map to all zeros.
std::vector<double> normalize_attention(std::span<const double> raw);
AttentionExport export_attention(const std::string& bag_id, std::span<const double> raw);

/// Columns: index, raw, normalized, flagged.
void write_attention_csv(const AttentionExport& e, const std::filesystem::path& path);
/// 1-pixel-high grayscale strip, one column per instance, scaled up vertically.
void write_attention_pgm(const AttentionExport& e, const std::filesystem::path& path, std::size_t height = 16);

struct WitnessRecovery {
    double recovery = 0.0; ///< mean attention mass on witnesses
    double baseline = 0.0; ///< mean witness fraction
    std::size_t bags = 0;
};

/// Averages over bags that have at least one witness flag.
/// Throws UndefinedMetricError when there are none.
WitnessRecovery witness_recovery(const std::vector<std::vector<double>>& attention,
                                 const std::vector<std::vector<bool>>& flags);

/// Shannon entropy (nats) of a distribution given by its logarithms.
double attention_entropy(std::span<const double> log_a);

} // namespace dqmil
