#include "support.hpp"

#include "dqmil/binary_io.hpp"
#include "dqmil/data.hpp"
#include "dqmil/errors.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

using namespace dqmil;
using namespace dqtest;
namespace fs = std::filesystem;

namespace {

BagRecord sample_bag()
{
    BagRecord b;
    b.id = "bag-\xc3\xa9t\xc3\xa9";  // UTF-8 id
    b.label = 1;
    Rng rng(51);
    for (std::size_t w : {3, 5}) {
        Tensor<float> t({9, w});
        for (auto& v : t.values()) {
            v = static_cast<float>(rng.normal());
        }
        b.sources.push_back(t);
    }
    b.sources[0][0] = -0.0f;
    b.sources[0][1] = 1e-40f;  // subnormal
    b.witness = std::vector<bool>{true, false, false, true, false, false, false, false, true};
    return b;
}

fs::path fresh_dir(const char* name)
{
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("DQBG round trip is bit exact")
{
    const auto bag = sample_bag();
    const auto bytes = encode_bag(bag);
    const auto back = decode_bag(bytes);
    CHECK(back == bag);
    CHECK(encode_bag(back) == bytes);
    CHECK(std::signbit(back.sources[0][0]));

    BagRecord plain = bag;
    plain.witness.reset();
    CHECK(decode_bag(encode_bag(plain)) == plain);
}

TEST_CASE("DQBG layout")
{
    BagRecord b;
    b.id = "x";
    b.label = 258;
    b.sources.push_back(Tensor<float>({2, 1}, {1.0f, -2.0f}));
    b.witness = std::vector<bool>{false, true};
    const std::vector<std::uint8_t> expected = {
        'D', 'Q', 'B', 'G', 1, 0,              // magic, version
        1, 0, 0, 0, 'x',                       // id
        2, 1,                                  // label 258
        1, 0,                                  // one source
        1, 0, 0, 0, 2, 0, 0, 0,                // width 1, N 2
        0x00, 0x00, 0x80, 0x3f,                // 1.0f
        0x00, 0x00, 0x00, 0xc0,                // -2.0f
        1, 0x02};                              // flags present, bit 1 set
    CHECK(encode_bag(b) == expected);
}

TEST_CASE("DQBG decoding errors")
{
    const auto bytes = encode_bag(sample_bag());
    SUBCASE("every truncation is a format error with an offset")
    {
        for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
            try {
                decode_bag(std::span(bytes.data(), cut));
                FAIL("expected FormatError at cut " << cut);
            } catch (const FormatError& e) {
                CHECK(std::string(e.what()).find("offset") != std::string::npos);
            }
        }
    }
    SUBCASE("wrong version")
    {
        auto bad = bytes;
        bad[4] = 2;
        CHECK_THROWS_AS(decode_bag(bad), VersionError);
    }
    SUBCASE("bad magic and trailing bytes")
    {
        auto bad = bytes;
        bad[1] = 'Z';
        CHECK_THROWS_AS(decode_bag(bad), FormatError);
        auto longer = bytes;
        longer.push_back(7);
        CHECK_THROWS_AS(decode_bag(longer), FormatError);
    }
    SUBCASE("misaligned sources refuse to encode")
    {
        auto b = sample_bag();
        b.sources[1] = Tensor<float>({8, 5});
        CHECK_THROWS_AS(encode_bag(b), AlignmentError);
        b = sample_bag();
        b.witness->pop_back();
        CHECK_THROWS_AS(encode_bag(b), AlignmentError);
    }
}

TEST_CASE("stratified split")
{
    SUBCASE("100 balanced bags at 80:20")
    {
        std::vector<std::uint16_t> labels(100);
        for (std::size_t i = 0; i < 100; ++i) {
            labels[i] = i % 2;
        }
        const std::vector<double> ratios{0.8, 0.2};
        const auto a = stratified_split(labels, ratios, 1);
        std::map<std::pair<int, int>, int> counts;
        for (std::size_t i = 0; i < 100; ++i) {
            ++counts[{static_cast<int>(a[i]), labels[i]}];
        }
        CHECK(counts[{0, 0}] == 40);
        CHECK(counts[{0, 1}] == 40);
        CHECK(counts[{2, 0}] == 10);
        CHECK(counts[{2, 1}] == 10);
        CHECK(stratified_split(labels, ratios, 1) == a);
        CHECK_FALSE(stratified_split(labels, ratios, 2) == a);
    }
    SUBCASE("default ratios give 160/20/20 on 200 bags")
    {
        std::vector<std::uint16_t> labels(200);
        for (std::size_t i = 0; i < 200; ++i) {
            labels[i] = i % 2;
        }
        const auto a = stratified_split(labels, std::vector<double>{0.8, 0.1, 0.1}, 7);
        CHECK(std::count(a.begin(), a.end(), Split::Train) == 160);
        CHECK(std::count(a.begin(), a.end(), Split::Val) == 20);
        CHECK(std::count(a.begin(), a.end(), Split::Test) == 20);
    }
    SUBCASE("uneven class sizes stay within one bag of the exact share")
    {
        std::vector<std::uint16_t> labels;
        for (int i = 0; i < 37; ++i) {
            labels.push_back(0);
        }
        for (int i = 0; i < 13; ++i) {
            labels.push_back(1);
        }
        const std::vector<double> ratios{0.7, 0.3};
        const auto a = stratified_split(labels, ratios, 3);
        for (std::uint16_t k : {0, 1}) {
            double n = 0, train = 0;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] == k) {
                    n += 1;
                    train += a[i] == Split::Train ? 1 : 0;
                }
            }
            CHECK(std::abs(train - 0.7 * n) < 1.0);
        }
    }
    SUBCASE("errors")
    {
        const std::vector<std::uint16_t> labels{0, 0, 1, 1};
        CHECK_THROWS_AS(stratified_split(labels, std::vector<double>{0.5, 0.6}, 1), ParameterError);
        CHECK_THROWS_AS(stratified_split(labels, std::vector<double>{1.0}, 1), ParameterError);
        const std::vector<std::uint16_t> tiny{0, 1, 1, 1};
        CHECK_THROWS_AS(stratified_split(tiny, std::vector<double>{0.5, 0.5}, 1), StratificationError);
    }
}

TEST_CASE("synthetic generator")
{
    SyntheticConfig sc;
    const Dataset ds = generate_synthetic(sc);
    SUBCASE("defaults and the MIL labelling rule over the whole set")
    {
        CHECK(ds.bags.size() == 200);
        CHECK(ds.class_count() == 2);
        std::size_t positives = 0;
        for (const auto& b : ds.bags) {
            const std::size_t n = b.instance_count();
            CHECK((n >= 30 && n <= 80));
            REQUIRE(b.witness.has_value());
            const auto w = static_cast<std::size_t>(std::count(b.witness->begin(), b.witness->end(), true));
            CHECK((b.label == 1) == (w > 0));
            if (b.label == 1) {
                CHECK(w == static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(n) - 1e-9)));
                ++positives;
            }
            CHECK(b.sources[0].cols() == 32);
            CHECK(b.sources[0].all_finite());
        }
        CHECK(positives == 100);
    }
    SUBCASE("rate with ceil(rate N) = 1 at N = 50 gives exactly one witness")
    {
        SyntheticConfig one = sc;
        one.min_instances = 50;
        one.max_instances = 50;
        one.witness_rate = 0.015;
        for (const auto& b : generate_synthetic(one).bags) {
            CHECK(std::count(b.witness->begin(), b.witness->end(), true) == (b.label == 1 ? 1 : 0));
        }
    }
    SUBCASE("deterministic per seed")
    {
        const Dataset again = generate_synthetic(sc);
        CHECK(again.bags == ds.bags);
        SyntheticConfig other = sc;
        other.seed = 8;
        CHECK_FALSE(generate_synthetic(other).bags == ds.bags);
    }
    SUBCASE("fusion mode and multi-class")
    {
        SyntheticConfig multi = sc;
        multi.bags = 30;
        multi.source_widths = {32, 32, 16};
        multi.classes = 3;
        const Dataset m = generate_synthetic(multi);
        CHECK(m.sources.size() == 3);
        CHECK(m.class_count() == 3);
        std::vector<int> per_class(3, 0);
        for (const auto& b : m.bags) {
            ++per_class[b.label];
            CHECK(b.sources[2].cols() == 16);
            CHECK((b.label > 0) == (std::count(b.witness->begin(), b.witness->end(), true) > 0));
        }
        CHECK(per_class == std::vector<int>{10, 10, 10});
    }
    SUBCASE("witnesses shift along the class direction only")
    {
        // Mean witness-minus-background difference has RMS ~ separation per coordinate.
        std::vector<double> wit(32, 0.0), bg(32, 0.0);
        double nw = 0, nb = 0;
        for (const auto& b : ds.bags) {
            for (std::size_t r = 0; r < b.instance_count(); ++r) {
                auto& acc = (*b.witness)[r] ? wit : bg;
                ((*b.witness)[r] ? nw : nb) += 1;
                for (std::size_t c = 0; c < 32; ++c) {
                    acc[c] += b.sources[0].at(r, c);
                }
            }
        }
        double sq = 0.0;
        for (std::size_t c = 0; c < 32; ++c) {
            const double d = wit[c] / nw - bg[c] / nb;
            sq += d * d;
        }
        CHECK(std::abs(std::sqrt(sq / 32.0) - 2.0) < 0.35);
    }
    SUBCASE("invalid configs")
    {
        SyntheticConfig bad = sc;
        bad.witness_rate = 0.0;
        CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
        bad = sc;
        bad.witness_rate = 1.5;
        CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
        bad = sc;
        bad.separation = -1.0;
        CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
        bad = sc;
        bad.min_instances = 90;
        CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    }
}

TEST_CASE("dataset on disk")
{
    SyntheticConfig sc;
    sc.bags = 24;
    sc.min_instances = 5;
    sc.max_instances = 9;
    sc.source_widths = {4, 3};
    const Dataset ds = generate_synthetic(sc);
    const auto labels = ds.labels();
    const auto assignment = stratified_split(labels, std::vector<double>{0.5, 0.25, 0.25}, 1);
    const auto dir = fresh_dir("dqmil_dataset_test");
    write_dataset(ds, assignment, dir);

    SUBCASE("manifest and bags reload exactly")
    {
        const Manifest m = read_manifest(dir / "manifest.jsonl");
        CHECK(m.entries.size() == 24);
        CHECK(m.sources.size() == 2);
        CHECK(m.class_names == ds.class_names);
        const Dataset all = load_dataset(dir / "manifest.jsonl", std::nullopt);
        CHECK(all.bags == ds.bags);
        const Dataset test = load_dataset(dir / "manifest.jsonl", Split::Test);
        CHECK(test.bags == subset(ds, assignment, Split::Test).bags);
        CHECK(test.bags.size() == 6);
    }
    SUBCASE("writing twice gives identical files")
    {
        const auto dir2 = fresh_dir("dqmil_dataset_test2");
        write_dataset(ds, assignment, dir2);
        CHECK(read_file(dir / "manifest.jsonl") == read_file(dir2 / "manifest.jsonl"));
        CHECK(read_file(dir / "bags" / "bag_0003.dqbg") == read_file(dir2 / "bags" / "bag_0003.dqbg"));
        fs::remove_all(dir2);
    }
    SUBCASE("missing bag file")
    {
        fs::remove(dir / "bags" / "bag_0005.dqbg");
        CHECK_THROWS_AS(load_dataset(dir / "manifest.jsonl", std::nullopt), IoError);
    }
    SUBCASE("manifest schema problems")
    {
        std::string text;
        {
            std::ifstream in(dir / "manifest.jsonl");
            text.assign(std::istreambuf_iterator<char>(in), {});
        }
        auto write = [&](const std::string& t) {
            std::ofstream(dir / "bad.jsonl") << t;
            return dir / "bad.jsonl";
        };
        CHECK_THROWS_AS(read_manifest(write("{\"format\":\"other\"}\n")), SchemaError);
        CHECK_THROWS_AS(read_manifest(write("not json\n")), SchemaError);
        const auto first = text.substr(0, text.find('\n') + 1);
        CHECK_THROWS_AS(
            read_manifest(write(first + "{\"id\":\"a\",\"label\":7,\"split\":\"train\",\"paths\":[\"x\"]}\n")),
            LabelError);
        CHECK_THROWS_AS(read_manifest(write(first + "{\"id\":\"a\",\"label\":0,\"split\":\"dev\",\"paths\":[\"x\"]}\n")),
                        ConfigError);
        CHECK_THROWS_AS(read_manifest(dir / "nope.jsonl"), IoError);
    }
    SUBCASE("sources split across files are concatenated")
    {
        Manifest m = read_manifest(dir / "manifest.jsonl");
        const BagRecord whole = read_bag(dir / "bags" / "bag_0000.dqbg");
        BagRecord first = whole;
        first.sources.resize(1);
        BagRecord second = whole;
        second.sources.erase(second.sources.begin());
        second.witness.reset();
        write_bag(first, dir / "part0.dqbg");
        write_bag(second, dir / "part1.dqbg");
        Manifest one;
        one.sources = m.sources;
        one.class_names = m.class_names;
        one.entries.push_back({whole.id, whole.label, Split::Train, {"part0.dqbg", "part1.dqbg"}});
        write_manifest(one, dir / "split.jsonl");
        const Dataset loaded = load_dataset(dir / "split.jsonl", std::nullopt);
        REQUIRE(loaded.bags.size() == 1);
        CHECK(loaded.bags[0] == whole);
    }
    fs::remove_all(dir);
}
