#include <gtest/gtest.h>

#include <fstream>

#include "fm3d/checkpoint.hpp"
#include "fm3d/errors.hpp"
#include "test_support.hpp"

using namespace fm3d;

namespace {

TensorArchive sample_archive() {
    TensorArchive a;
    a.header["meta"] = {{"version_tag", "x"}, {"n", 3}};
    a.put("b.weight", torch::arange(6, torch::kFloat32).view({2, 3}));
    a.put("a.bias", torch::tensor({-1.5f, 2.25f}));
    a.put("scalar", torch::tensor(7.0f));
    return a;
}

} // namespace

TEST(Checkpoint, SerializeLoadSerializeIsByteIdentical) {
    const auto bytes = sample_archive().serialize();
    const auto back = TensorArchive::deserialize(bytes);
    EXPECT_EQ(back.serialize(), bytes);
    EXPECT_EQ(back.header["meta"]["n"], 3);
    EXPECT_TRUE(torch::equal(back.get("b.weight"), torch::arange(6, torch::kFloat32).view({2, 3})));
    EXPECT_EQ(back.get("scalar").dim(), 0);
}

TEST(Checkpoint, FileRoundTrip) {
    const auto dir = test_support::scratch_dir("ckpt_file");
    sample_archive().save(dir / "a.ckpt");
    EXPECT_EQ(TensorArchive::load(dir / "a.ckpt").serialize(), sample_archive().serialize());
    EXPECT_THROW(TensorArchive::load(dir / "missing.ckpt"), IoError);
}

TEST(Checkpoint, StoresFloat64AsFloat32) {
    TensorArchive a;
    a.put("x", torch::tensor({0.1}, torch::kFloat64));
    EXPECT_EQ(a.get("x").scalar_type(), torch::kFloat32);
}

TEST(Checkpoint, CorruptionRaisesVersionError) {
    const auto bytes = sample_archive().serialize();
    // Every strict prefix is rejected.
    for (std::size_t n = 0; n < bytes.size(); ++n)
        EXPECT_THROW(TensorArchive::deserialize(bytes.substr(0, n)), VersionError) << n;
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(TensorArchive::deserialize(bad_magic), VersionError);
    auto bad_version = bytes;
    bad_version[8] = 9;
    EXPECT_THROW(TensorArchive::deserialize(bad_version), VersionError);
    EXPECT_THROW(TensorArchive::deserialize(bytes + "z"), VersionError);
    auto bad_header = bytes;
    bad_header[21] = '\x01';
    EXPECT_THROW(TensorArchive::deserialize(bad_header), VersionError);
}

TEST(Checkpoint, HugeShapeInHeaderRejectedWithoutAllocating) {
    TensorArchive a;
    a.put("t", torch::zeros({1}));
    auto bytes = a.serialize();
    const auto at = bytes.find("[1]");
    ASSERT_NE(at, std::string::npos);
    bytes.replace(at, 3, "[4611686018427387904,4]");
    // Header length changed; patch it.
    const std::uint64_t hlen = bytes.size() - 20 - 4;
    for (int i = 0; i < 8; ++i) bytes[12 + i] = static_cast<char>((hlen >> (8 * i)) & 0xFF);
    EXPECT_THROW(TensorArchive::deserialize(bytes), VersionError);
}

TEST(Checkpoint, MissingOrMisshapedTensor) {
    auto a = sample_archive();
    EXPECT_THROW(a.get("nope"), VersionError);
    auto dst = torch::zeros({3, 2});
    EXPECT_THROW(a.load_into("b.weight", dst), VersionError);
    auto ok = torch::zeros({2, 3});
    a.load_into("b.weight", ok);
    EXPECT_EQ(ok[1][2].item<float>(), 5.0f);
}

TEST(Checkpoint, ModuleRoundTrip) {
    torch::manual_seed(0);
    torch::nn::Linear src(3, 2), dst(3, 2);
    TensorArchive a;
    a.put_module("m.", *src);
    a.load_module("m.", *dst);
    EXPECT_TRUE(torch::equal(src->weight, dst->weight));
    EXPECT_TRUE(torch::equal(src->bias, dst->bias));
    torch::nn::Linear other(4, 2);
    EXPECT_THROW(a.load_module("m.", *other), VersionError);
}
