#include "pam/checkpoint.hpp"
#include "pam/error.hpp"
#include "pam/propmask.hpp"
#include "pam/rle.hpp"
#include "pam/volume.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace pam;

namespace {

std::string error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

}  // namespace

TEST(Pvol, RoundTripsBitwise) {
  std::mt19937_64 rng(1);
  VolumeF v({7, 5, 3}, {0.7, 0.8, 2.5});
  std::normal_distribution<float> n;
  for (Index i = 0; i < v.size(); ++i) v.voxels[i] = n(rng);
  v.voxels[0] = -0.0f;
  v.voxels[1] = std::numeric_limits<float>::denorm_min();
  const auto bytes = encode_volume(v);
  EXPECT_EQ(bytes.substr(0, 5), "PVOL1");
  const auto back = decode_volume<float>(bytes);
  EXPECT_TRUE(back == v);
  EXPECT_EQ(encode_volume(back), bytes);
  EXPECT_TRUE(std::signbit(back.voxels[0]));

  Mask3D m({3, 2, 2}, {1, 1, 1});
  m(2, 1, 1) = 1;
  EXPECT_TRUE(decode_volume<std::uint8_t>(encode_volume(m)) == m);
  EXPECT_EQ(peek_dtype(encode_volume(m)), "u8");
}

TEST(Pvol, RejectsCorruptInput) {
  VolumeF v({2, 2, 2}, {1, 1, 1});
  const auto bytes = encode_volume(v);
  EXPECT_EQ(error_code([&] { decode_volume<float>("PVOL9" + bytes.substr(5)); }), "bad_magic");
  EXPECT_EQ(error_code([&] { decode_volume<float>(bytes.substr(0, bytes.size() - 1)); }), "truncated");
  EXPECT_NE(error_code([&] { decode_volume<std::uint8_t>(bytes); }), "");
}

TEST(Checkpoint, RoundTripsAndVerifiesHash) {
  PropMaskNet<float> net(NetConfig{32, {4, 8, 8}, 2, 0.01}, 3);
  Checkpoint c;
  c.kind = ModelKind::kPropMask;
  c.config = net.config();
  c.params = export_parameters(net.params());
  c.finetuned = true;
  c.base_hash = "0123456789abcdef";
  const auto bytes = encode_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 9), "PAMCKPT1\n");
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(back.kind, ModelKind::kPropMask);
  EXPECT_TRUE(back.config == c.config);
  EXPECT_TRUE(back.finetuned);
  EXPECT_EQ(back.base_hash, c.base_hash);
  EXPECT_EQ(encode_checkpoint(back), bytes);

  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x40;
  EXPECT_NE(error_code([&] { decode_checkpoint(flipped); }), "");
  EXPECT_EQ(error_code([&] { decode_checkpoint(bytes.substr(0, bytes.size() - 4)); }), "truncated");
  EXPECT_EQ(error_code([&] { decode_checkpoint("PAMCKPT2\n{}"); }), "bad_magic");
}

TEST(Checkpoint, AssignRejectsWrongArchitecture) {
  PropMaskNet<float> a(NetConfig{32, {4, 8, 8}, 2, 0.01}, 3);
  PropMaskNet<float> b(NetConfig{32, {4, 8, 16}, 2, 0.01}, 3);
  EXPECT_EQ(error_code([&] { assign_parameters(b.params(), a.params()); }), "checkpoint_mismatch");
  PropMaskNet<double> d(a.config(), 9);
  assign_parameters(d.params(), a.params());
  EXPECT_EQ(export_parameters(d.params()).hash(), a.params().hash());
}

TEST(Rle, Examples) {
  EXPECT_EQ(rle_encode(Mask2D::Zero(2, 2)).runs, (std::vector<Index>{4}));
  EXPECT_EQ(rle_encode(Mask2D::Ones(2, 2)).runs, (std::vector<Index>{0, 4}));
  Mask2D m = Mask2D::Zero(2, 3);
  m(0, 2) = m(1, 0) = 1;
  EXPECT_EQ(rle_encode(m).runs, (std::vector<Index>{2, 2, 2}));
}

TEST(Rle, RandomRoundTrip) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    Mask2D m(16, 16);
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng() % 2;
    const auto r = rle_encode(m);
    EXPECT_TRUE((rle_decode(r) == m).all());
    EXPECT_EQ(rle_from_json(rle_to_json(r)), r);
    EXPECT_EQ(rle_from_string(rle_to_string(r.runs)), r.runs);
  }
}

TEST(Rle, RejectsBadRuns) {
  EXPECT_EQ(error_code([] { rle_decode({2, 2, {3}}); }), "bad_rle");
  EXPECT_EQ(error_code([] { rle_decode({2, 2, {5, -1}}); }), "bad_rle");
  const auto j = nlohmann::json::parse(R"({"width":2,"height":1,"runs":"1 1"})");
  EXPECT_EQ(rle_decode(rle_from_json(j))(0, 1), 1);
}
