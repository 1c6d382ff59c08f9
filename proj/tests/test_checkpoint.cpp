#include "doctest.h"

#include <fstream>

#include "demenscan/checkpoint.hpp"

#include "test_util.hpp"

using namespace demenscan;
using testutil::random_tensor;
using testutil::reduced_spec;
using testutil::TempDir;

namespace {

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void dump(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("round trip preserves spec, bits, and forward outputs") {
    TempDir tmp("ckpt");
    const ModelSpec spec = reduced_spec();
    SeededRng rng(31);
    const Parameters params = init_parameters(spec, rng);
    const std::string path = tmp.str("model.ckpt");

    checkpoint_save(spec, params, path);
    const auto [spec2, params2] = checkpoint_load(path);
    CHECK(spec2 == spec);

    std::vector<const Tensor*> orig, loaded;
    for_each_tensor(params, [&orig](const Tensor& t) { orig.push_back(&t); });
    for_each_tensor(params2, [&loaded](const Tensor& t) { loaded.push_back(&t); });
    REQUIRE(orig.size() == loaded.size());
    for (size_t i = 0; i < orig.size(); ++i) {
        CHECK(orig[i]->values() == loaded[i]->values());
    }

    const Tensor x = random_tensor(rng, {3, 16, 16}, 0.0, 1.0);
    const auto before = model_forward(spec, params, x, RunMode::Eval);
    const auto after = model_forward(spec2, params2, x, RunMode::Eval);
    CHECK(before.logits.values() == after.logits.values());

    // save→load→save is byte-identical
    const std::string path2 = tmp.str("model2.ckpt");
    checkpoint_save(spec2, params2, path2);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("magic, version, truncation, and crc are all rejected") {
    TempDir tmp("ckpt_bad");
    const ModelSpec spec = reduced_spec();
    SeededRng rng(32);
    const Parameters params = init_parameters(spec, rng);
    const std::string path = tmp.str("model.ckpt");
    checkpoint_save(spec, params, path);
    const std::vector<char> good = slurp(path);

    SUBCASE("bad magic") {
        auto bad = good;
        bad[0] = 'X';
        dump(path, bad);
        CHECK_THROWS_WITH_AS(checkpoint_load(path), doctest::Contains("magic"),
                             CheckpointError);
    }
    SUBCASE("bad version") {
        auto bad = good;
        bad[4] = 9;
        dump(path, bad);
        CHECK_THROWS_WITH_AS(checkpoint_load(path), doctest::Contains("version"),
                             CheckpointError);
    }
    SUBCASE("truncated") {
        auto bad = good;
        bad.resize(bad.size() / 2);
        dump(path, bad);
        CHECK_THROWS_AS(checkpoint_load(path), CheckpointError);
    }
    SUBCASE("payload byte flip fails the crc") {
        auto bad = good;
        bad[bad.size() / 2] = static_cast<char>(bad[bad.size() / 2] ^ 0x01);
        dump(path, bad);
        CHECK_THROWS_WITH_AS(checkpoint_load(path), doctest::Contains("crc"), CheckpointError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(checkpoint_load(tmp.str("nope.ckpt")), CheckpointError);
    }
}

} // TEST_SUITE
