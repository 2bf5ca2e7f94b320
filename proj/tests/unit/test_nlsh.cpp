#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "nlosid/nlsh.hpp"

using namespace nlosid;
namespace fs = std::filesystem;

namespace {

PixelArrayFrame random_frame(std::uint64_t seed, int rows, int cols, std::size_t bins) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> cnt(0, 70000);
  PixelArrayFrame f;
  f.rows = rows;
  f.cols = cols;
  f.histograms.assign(static_cast<std::size_t>(rows * cols), TemporalHistogram(bins, 50.0, 12.5));
  for (auto& h : f.histograms)
    for (auto& v : h.counts) v = cnt(rng);
  f.hot_mask.assign(f.histograms.size(), 0);
  for (auto& m : f.hot_mask) m = rng() % 5 == 0;
  f.meta = {2, 6, 4, ClothingMode::same, rng(), false};
  return f;
}

std::uint32_t le32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

}  // namespace

TEST(Nlsh, RoundTripIsBitExact) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto f = random_frame(s, 4, 4, 250);
    const auto bytes = nlsh::encode(f);
    EXPECT_EQ(bytes.size(), nlsh::file_size_for(16, 250));
    EXPECT_EQ(nlsh::decode(bytes), f);
    EXPECT_EQ(nlsh::encode(nlsh::decode(bytes)), bytes);
  }
}

TEST(Nlsh, HeaderLayoutIsLittleEndian) {
  auto f = random_frame(9, 2, 2, 3);
  f.meta.noiseless = true;
  const auto b = nlsh::encode(f);
  EXPECT_EQ(b.substr(0, 4), "NLSH");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 1);  // version
  EXPECT_EQ(static_cast<unsigned char>(b[5]), 0);
  EXPECT_EQ(static_cast<unsigned char>(b[6]), 1);  // noiseless flag
  EXPECT_EQ(le32(b, 8), 4u);                        // n_pixels
  EXPECT_EQ(le32(b, 12), 3u);                       // n_bins
  double bw = 0.0;
  std::memcpy(&bw, b.data() + 16, 8);
  EXPECT_EQ(bw, 50.0);
  EXPECT_EQ(static_cast<unsigned char>(b[32]), 2);  // person
  EXPECT_EQ(static_cast<unsigned char>(b[33]), 6);  // position
  EXPECT_EQ(static_cast<unsigned char>(b[34]), 4);  // illumination
  EXPECT_EQ(static_cast<unsigned char>(b[35]), 1);  // clothing = same
  // First pixel record: u16 index, u8 hot, u8 pad, counts.
  EXPECT_EQ(static_cast<unsigned char>(b[44]), 0);
  EXPECT_EQ(le32(b, 48), static_cast<std::uint32_t>(f.histograms[0].counts[0]));
}

TEST(Nlsh, RejectsCorruptInput) {
  const auto bytes = nlsh::encode(random_frame(1, 2, 2, 8));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(nlsh::decode(bad), DataError);
  bad = bytes;
  bad[4] = 2;
  try {
    nlsh::decode(bad);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  try {
    nlsh::decode(bytes.substr(0, bytes.size() - 3));
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(bytes.size())), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(bytes.size() - 3)), std::string::npos) << msg;
  }
  EXPECT_THROW(nlsh::decode(bytes.substr(0, 10)), DataError);
  bad = bytes;
  bad[44 + 4 + 8 * 4] = 0;  // second pixel claims index 0 again
  EXPECT_THROW(nlsh::decode(bad), DataError);
}

TEST(Nlsh, CountsAreRounded) {
  auto f = random_frame(2, 1, 1, 4);
  f.rows = f.cols = 1;
  f.histograms[0].counts = {0.4, 1.6, 2.5, 10.0};
  const auto g = nlsh::decode(nlsh::encode(f));
  EXPECT_EQ(g.histograms[0].counts, (std::vector<double>{0, 2, 2, 10}));
  f.histograms[0].counts[0] = -1.0;
  EXPECT_THROW(nlsh::encode(f), DataError);
}

TEST(Nlsh, FileRoundTrip) {
  const auto dir = fs::temp_directory_path() / "nlosid_nlsh_test";
  fs::create_directories(dir);
  const auto f = random_frame(3, 32, 32, 250);
  nlsh::write_frame(dir / "a.nlsh", f);
  EXPECT_EQ(nlsh::read_frame(dir / "a.nlsh"), f);
  EXPECT_FALSE(fs::exists(dir / "a.nlsh.tmp"));
  EXPECT_THROW(nlsh::read_frame(dir / "missing.nlsh"), DataError);
  fs::remove_all(dir);
}

TEST(Manifest, RoundTripAndCompleteness) {
  nlsh::Manifest m;
  m.clothing_mode = ClothingMode::same;
  m.illuminations = 2;
  m.seed = 123456789012345ull;
  m.roster = default_roster();
  m.entries.push_back({"bg_i1.nlsh", nlsh::FrameRole::background, 0, 0, 1});
  m.entries.push_back({"p1_Db_i1.nlsh", nlsh::FrameRole::measurement, 1, 6, 1});
  const auto text = nlsh::format_manifest(m);
  const auto back = nlsh::parse_manifest(text);
  EXPECT_EQ(back.clothing_mode, m.clothing_mode);
  EXPECT_EQ(back.seed, m.seed);
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.entries[1].position_index, 6);
  EXPECT_EQ(back.roster[2].clothing_albedo, m.roster[2].clothing_albedo);
  EXPECT_EQ(nlsh::format_manifest(back), text);

  // Dropping a frame line leaves the declared counts unmatched.
  const auto cut = text.substr(0, text.rfind("frame "));
  EXPECT_THROW(nlsh::parse_manifest(cut), DataError);
  EXPECT_THROW(nlsh::parse_manifest("clothing_mode same\n"), DataError);
}
