#include "dqmil/data.hpp"

#include "dqmil/binary_io.hpp"
#include "dqmil/errors.hpp"
#include "dqmil/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

namespace dqmil {

// --- BagRecord -------------------------------------------------------------

std::size_t BagRecord::instance_count() const
{
    return sources.empty() ? 0 : sources.front().rows();
}

void BagRecord::validate() const
{
    if (sources.empty()) {
        throw SchemaError("bag '" + id + "' has no sources");
    }
    const std::size_t n = instance_count();
    if (n == 0) {
        throw EmptyInputError("bag '" + id + "' has no instances");
    }
    for (std::size_t s = 0; s < sources.size(); ++s) {
        if (sources[s].rank() != 2) {
            throw SchemaError("bag '" + id + "' source " + std::to_string(s) + " is not a matrix");
        }
        if (sources[s].rows() != n) {
            throw AlignmentError("bag '" + id + "' source " + std::to_string(s) + " has " +
                                 std::to_string(sources[s].rows()) + " instances, expected " + std::to_string(n));
        }
    }
    if (witness && witness->size() != n) {
        throw AlignmentError("bag '" + id + "' has " + std::to_string(witness->size()) + " witness flags for " +
                             std::to_string(n) + " instances");
    }
}

template <typename T>
SourceEmbeddingSet<T> BagRecord::embeddings(const std::vector<SourceSpec>& specs) const
{
    if (specs.size() != sources.size()) {
        throw SchemaError("bag '" + id + "' has " + std::to_string(sources.size()) + " sources, manifest declares " +
                          std::to_string(specs.size()));
    }
    SourceEmbeddingSet<T> set;
    for (std::size_t s = 0; s < specs.size(); ++s) {
        set.ids.push_back(specs[s].id);
        set.features.push_back(sources[s].cast<T>());
    }
    return set;
}

template SourceEmbeddingSet<float> BagRecord::embeddings<float>(const std::vector<SourceSpec>&) const;
template SourceEmbeddingSet<double> BagRecord::embeddings<double>(const std::vector<SourceSpec>&) const;

// --- DQBG ------------------------------------------------------------------

std::vector<std::uint8_t> encode_bag(const BagRecord& record)
{
    record.validate();
    ByteWriter w;
    w.raw("DQBG");
    w.u16(kBagFormatVersion);
    w.u32(static_cast<std::uint32_t>(record.id.size()));
    w.raw(record.id);
    w.u16(record.label);
    w.u16(static_cast<std::uint16_t>(record.sources.size()));
    for (const auto& src : record.sources) {
        w.u32(static_cast<std::uint32_t>(src.cols()));
        w.u32(static_cast<std::uint32_t>(src.rows()));
        for (float v : src.values()) {
            w.f32(v);
        }
    }
    if (record.witness) {
        w.u8(1);
        const auto& flags = *record.witness;
        for (std::size_t byte = 0; byte < (flags.size() + 7) / 8; ++byte) {
            std::uint8_t packed = 0;
            for (std::size_t bit = 0; bit < 8 && byte * 8 + bit < flags.size(); ++bit) {
                if (flags[byte * 8 + bit]) {
                    packed |= static_cast<std::uint8_t>(1u << bit);
                }
            }
            w.u8(packed);
        }
    } else {
        w.u8(0);
    }
    return w.take();
}

BagRecord decode_bag(std::span<const std::uint8_t> bytes)
{
    ByteReader r(bytes, "DQBG");
    r.expect_magic("DQBG");
    const std::uint16_t version = r.u16();
    if (version != kBagFormatVersion) {
        throw VersionError("DQBG: file has format version " + std::to_string(version) + ", this build reads version " +
                           std::to_string(kBagFormatVersion));
    }
    BagRecord rec;
    rec.id = r.string(r.u32());
    rec.label = r.u16();
    const std::uint16_t source_count = r.u16();
    if (source_count == 0) {
        r.fail("bag declares zero sources");
    }
    std::size_t n = 0;
    for (std::uint16_t s = 0; s < source_count; ++s) {
        const std::uint32_t width = r.u32();
        const std::uint32_t rows = r.u32();
        if (s == 0) {
            n = rows;
        } else if (rows != n) {
            r.fail("source " + std::to_string(s) + " has " + std::to_string(rows) + " instances, expected " +
                   std::to_string(n));
        }
        const std::uint64_t count = static_cast<std::uint64_t>(width) * rows;
        if (count * 4 > r.remaining()) {
            r.fail("truncated feature block for source " + std::to_string(s));
        }
        std::vector<float> values(count);
        for (auto& v : values) {
            v = r.f32();
        }
        rec.sources.emplace_back(Shape{rows, width}, std::move(values));
    }
    const std::uint8_t has_flags = r.u8();
    if (has_flags > 1) {
        r.fail("invalid witness-flag presence byte");
    }
    if (has_flags == 1) {
        std::vector<bool> flags(n);
        for (std::size_t byte = 0; byte < (n + 7) / 8; ++byte) {
            const std::uint8_t packed = r.u8();
            for (std::size_t bit = 0; bit < 8 && byte * 8 + bit < n; ++bit) {
                flags[byte * 8 + bit] = (packed >> bit) & 1u;
            }
        }
        rec.witness = std::move(flags);
    }
    if (r.remaining() != 0) {
        r.fail("trailing bytes");
    }
    if (n == 0) {
        throw FormatError("DQBG: bag '" + rec.id + "' has no instances");
    }
    return rec;
}

void write_bag(const BagRecord& record, const std::filesystem::path& path)
{
    write_file(path, encode_bag(record));
}

BagRecord read_bag(const std::filesystem::path& path)
{
    try {
        return decode_bag(read_file(path));
    } catch (const VersionError& e) {
        throw VersionError(path.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// --- splits ----------------------------------------------------------------

std::string_view to_string(Split s)
{
    switch (s) {
    case Split::Train:
        return "train";
    case Split::Val:
        return "val";
    case Split::Test:
        return "test";
    }
    return "unknown";
}

Split parse_split(std::string_view name)
{
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val, test)");
}

std::vector<Split> stratified_split(std::span<const std::uint16_t> labels, std::span<const double> ratios,
                                    std::uint64_t seed)
{
    if (ratios.size() != 2 && ratios.size() != 3) {
        throw ParameterError("split ratios need 2 (train, test) or 3 (train, val, test) entries");
    }
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) {
            throw ParameterError("split ratios must be non-negative");
        }
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ParameterError("split ratios must sum to 1, got " + std::to_string(total));
    }
    const std::vector<Split> kinds =
        ratios.size() == 2 ? std::vector<Split>{Split::Train, Split::Test}
                           : std::vector<Split>{Split::Train, Split::Val, Split::Test};

    std::map<std::uint16_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        by_class[labels[i]].push_back(i);
    }

    std::vector<Split> assignment(labels.size(), Split::Train);
    Rng rng(seed, 0x5b17);
    for (auto& [label, members] : by_class) {
        const std::size_t n = members.size();
        std::vector<std::size_t> counts(ratios.size());
        std::vector<std::pair<double, std::size_t>> remainders;
        std::size_t assigned = 0;
        for (std::size_t k = 0; k < ratios.size(); ++k) {
            const double exact = ratios[k] * static_cast<double>(n);
            counts[k] = static_cast<std::size_t>(std::floor(exact));
            assigned += counts[k];
            remainders.push_back({exact - static_cast<double>(counts[k]), k});
        }
        // Largest remainder first, ties to the earlier split.
        std::stable_sort(remainders.begin(), remainders.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t i = 0; assigned < n; ++i, ++assigned) {
            ++counts[remainders[i % remainders.size()].second];
        }
        for (std::size_t k = 0; k < ratios.size(); ++k) {
            if (ratios[k] > 0.0 && counts[k] == 0) {
                throw StratificationError("class " + std::to_string(label) + " has " + std::to_string(n) +
                                          " bags, too few to populate the " + std::string(to_string(kinds[k])) +
                                          " split");
            }
        }
        rng.shuffle(std::span<std::size_t>(members));
        std::size_t pos = 0;
        for (std::size_t k = 0; k < ratios.size(); ++k) {
            for (std::size_t c = 0; c < counts[k]; ++c) {
                assignment[members[pos++]] = kinds[k];
            }
        }
    }
    return assignment;
}

// --- manifest --------------------------------------------------------------

void Manifest::validate() const
{
    if (sources.empty()) {
        throw SchemaError("manifest declares no sources");
    }
    if (class_names.size() < 2) {
        throw SchemaError("manifest needs at least two classes");
    }
    std::set<std::string> ids;
    for (const auto& e : entries) {
        if (!ids.insert(e.id).second) {
            throw SchemaError("duplicate bag id '" + e.id + "' in manifest");
        }
        if (e.label >= class_names.size()) {
            throw LabelError("bag '" + e.id + "' has label " + std::to_string(e.label) + " but only " +
                             std::to_string(class_names.size()) + " classes are declared");
        }
        if (e.paths.empty()) {
            throw SchemaError("bag '" + e.id + "' lists no files");
        }
    }
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path)
{
    manifest.validate();
    nlohmann::json sources = nlohmann::json::array();
    for (const auto& s : manifest.sources) {
        sources.push_back({{"id", s.id}, {"width", s.width}});
    }
    std::string text =
        nlohmann::json{{"format", "dqmil-manifest"}, {"version", manifest.version}, {"sources", sources},
                       {"classes", manifest.class_names}}
            .dump() +
        "\n";
    for (const auto& e : manifest.entries) {
        text += nlohmann::json{{"id", e.id}, {"label", e.label}, {"split", std::string(to_string(e.split))},
                               {"paths", e.paths}}
                    .dump() +
                "\n";
    }
    write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Manifest read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path.string());
    }
    Manifest m;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    try {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            const auto j = nlohmann::json::parse(line);
            if (!header_seen) {
                if (j.value("format", "") != "dqmil-manifest") {
                    throw SchemaError(path.string() + ": first line is not a dqmil-manifest header");
                }
                m.version = j.at("version").get<std::uint32_t>();
                if (m.version != 1) {
                    throw VersionError(path.string() + ": manifest version " + std::to_string(m.version) +
                                       ", this build reads version 1");
                }
                for (const auto& s : j.at("sources")) {
                    m.sources.push_back({s.at("id").get<std::string>(), s.at("width").get<std::size_t>(), 256});
                }
                m.class_names = j.at("classes").get<std::vector<std::string>>();
                header_seen = true;
                continue;
            }
            ManifestEntry e;
            e.id = j.at("id").get<std::string>();
            e.label = j.at("label").get<std::uint16_t>();
            e.split = parse_split(j.at("split").get<std::string>());
            e.paths = j.at("paths").get<std::vector<std::string>>();
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!header_seen) {
        throw SchemaError(path.string() + ": empty manifest");
    }
    m.validate();
    return m;
}

std::vector<std::uint16_t> Dataset::labels() const
{
    std::vector<std::uint16_t> out;
    out.reserve(bags.size());
    for (const auto& b : bags) {
        out.push_back(b.label);
    }
    return out;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, std::optional<Split> split)
{
    const Manifest m = read_manifest(manifest_path);
    const auto base = manifest_path.parent_path();
    Dataset ds;
    ds.sources = m.sources;
    ds.class_names = m.class_names;
    for (const auto& e : m.entries) {
        if (split && e.split != *split) {
            continue;
        }
        BagRecord merged;
        for (const auto& rel : e.paths) {
            const auto file = base / rel;
            if (!std::filesystem::exists(file)) {
                throw IoError("bag file " + file.string() + " referenced by '" + e.id + "' does not exist");
            }
            BagRecord part = read_bag(file);
            if (merged.sources.empty()) {
                merged = std::move(part);
            } else {
                if (part.id != merged.id || part.label != merged.label) {
                    throw SchemaError("files of bag '" + e.id + "' disagree on id or label");
                }
                for (auto& s : part.sources) {
                    merged.sources.push_back(std::move(s));
                }
                if (!merged.witness && part.witness) {
                    merged.witness = std::move(part.witness);
                }
            }
        }
        if (merged.id != e.id || merged.label != e.label) {
            throw SchemaError("bag file for '" + e.id + "' holds id '" + merged.id + "' label " +
                              std::to_string(merged.label) + ", manifest says label " + std::to_string(e.label));
        }
        merged.validate();
        if (merged.sources.size() != ds.sources.size()) {
            throw SchemaError("bag '" + e.id + "' has " + std::to_string(merged.sources.size()) +
                              " sources, manifest declares " + std::to_string(ds.sources.size()));
        }
        for (std::size_t s = 0; s < ds.sources.size(); ++s) {
            if (merged.sources[s].cols() != ds.sources[s].width) {
                throw SchemaError("bag '" + e.id + "' source '" + ds.sources[s].id + "' has width " +
                                  std::to_string(merged.sources[s].cols()) + ", manifest declares " +
                                  std::to_string(ds.sources[s].width));
            }
        }
        ds.bags.push_back(std::move(merged));
    }
    return ds;
}

Dataset subset(const Dataset& dataset, std::span<const Split> assignment, Split which)
{
    if (assignment.size() != dataset.bags.size()) {
        throw DimensionError("split assignment covers " + std::to_string(assignment.size()) + " of " +
                             std::to_string(dataset.bags.size()) + " bags");
    }
    Dataset out;
    out.sources = dataset.sources;
    out.class_names = dataset.class_names;
    for (std::size_t i = 0; i < dataset.bags.size(); ++i) {
        if (assignment[i] == which) {
            out.bags.push_back(dataset.bags[i]);
        }
    }
    return out;
}

void write_dataset(const Dataset& dataset, std::span<const Split> assignment, const std::filesystem::path& dir)
{
    if (assignment.size() != dataset.bags.size()) {
        throw DimensionError("split assignment does not cover the dataset");
    }
    std::error_code ec;
    std::filesystem::create_directories(dir / "bags", ec);
    if (ec) {
        throw IoError("cannot create " + (dir / "bags").string() + ": " + ec.message());
    }
    Manifest m;
    m.sources = dataset.sources;
    m.class_names = dataset.class_names;
    for (std::size_t i = 0; i < dataset.bags.size(); ++i) {
        const auto& bag = dataset.bags[i];
        const std::string rel = "bags/" + bag.id + ".dqbg";
        write_bag(bag, dir / rel);
        m.entries.push_back({bag.id, bag.label, assignment[i], {rel}});
    }
    write_manifest(m, dir / "manifest.jsonl");
}

} // namespace dqmil
