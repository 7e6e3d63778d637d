#pragma once

#include "dqmil/dme.hpp"
#include "dqmil/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dqmil {

/// One bag: a label and per-source instance features (N x C_s each).
struct BagRecord {
    std::string id;
    std::uint16_t label = 0;
    std::vector<Tensor<float>> sources;
    /// Instance-level witness flags; only known for synthetic data.
    std::optional<std::vector<bool>> witness;

    std::size_t instance_count() const;
    /// Throws AlignmentError / SchemaError on inconsistent contents.
    void validate() const;

    template <typename T>
    SourceEmbeddingSet<T> embeddings(const std::vector<SourceSpec>& specs) const;

    friend bool operator==(const BagRecord&, const BagRecord&) = default;
};

/// DQBG layout (little-endian):
///
///   "DQBG" | u16 version | u32 id length | id (UTF-8) | u16 label | u16 source count
///   per source: u32 width | u32 N | f32 * (N * width), row-major
///   u8 flags present | (if 1) ceil(N / 8) bytes, bit i of byte i / 8 = flag of instance i (LSB first)
inline constexpr std::uint16_t kBagFormatVersion = 1;

std::vector<std::uint8_t> encode_bag(const BagRecord& record);
/// Throws FormatError (with byte offset) or VersionError; never returns a partial record.
BagRecord decode_bag(std::span<const std::uint8_t> bytes);
void write_bag(const BagRecord& record, const std::filesystem::path& path);
BagRecord read_bag(const std::filesystem::path& path);

enum class Split { Train, Val, Test };

std::string_view to_string(Split s);
Split parse_split(std::string_view name);

struct ManifestEntry {
    std::string id;
    std::uint16_t label = 0;
    Split split = Split::Train;
    /// Bag files relative to the manifest directory; sources are concatenated in order.
    std::vector<std::string> paths;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Line-oriented manifest: a header object followed by one object per bag.
struct Manifest {
    std::uint32_t version = 1;
    /// Source ids and input widths (proj_width is not stored).
    std::vector<SourceSpec> sources;
    std::vector<std::string> class_names;
    std::vector<ManifestEntry> entries;

    /// Unique ids, labels in range, at least one source.
    void validate() const;
};

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

struct Dataset {
    std::vector<SourceSpec> sources;
    std::vector<std::string> class_names;
    std::vector<BagRecord> bags;

    std::size_t class_count() const noexcept { return class_names.size(); }
    std::vector<std::uint16_t> labels() const;
};

/// Loads the bags of `split` (all bags when unset); every file must exist.
Dataset load_dataset(const std::filesystem::path& manifest_path, std::optional<Split> split);

/// Bags of `dataset` whose assignment equals `which`, in original order.
Dataset subset(const Dataset& dataset, std::span<const Split> assignment, Split which);

/// Stratified per-class partition. `ratios` has 2 entries (train, test) or
/// 3 (train, val, test) and must sum to 1. Per class the counts follow the
/// largest-remainder rule, so each split is within one bag of its exact share.
std::vector<Split> stratified_split(std::span<const std::uint16_t> labels, std::span<const double> ratios,
                                    std::uint64_t seed);

struct SyntheticConfig {
    std::size_t bags = 200;
    std::size_t min_instances = 30;
    std::size_t max_instances = 80;
    std::vector<std::size_t> source_widths{32};
    /// Fraction of a positive bag's instances that are witnesses; count = ceil(rate * N).
    double witness_rate = 0.1;
    /// Witness shift along a unit class direction, per coordinate (RMS) in noise
    /// units: the class-mean distance is separation * noise * sqrt(width).
    double separation = 2.0;
    double noise = 1.0;
    std::size_t classes = 2;
    std::size_t background_components = 3;
    std::uint64_t seed = 7;

    void validate() const;
};

/// Gaussian-mixture bags. Class 0 bags contain background draws only; a bag of
/// class y > 0 has ceil(rate * N) witnesses, each a background draw shifted
/// along the class-y direction (directions are orthogonal to the background
/// component means). Labels are balanced across classes.
Dataset generate_synthetic(const SyntheticConfig& config);

/// Writes `bags/<id>.dqbg` files and `manifest.jsonl` under `dir`.
void write_dataset(const Dataset& dataset, std::span<const Split> assignment, const std::filesystem::path& dir);

} // namespace dqmil
