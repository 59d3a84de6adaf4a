// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>
#include <vector>

#include "mmguide/errors.hpp"
#include "mmguide/synth.hpp"
#include "test_support.hpp"

using namespace mmguide;

namespace {

std::string serialize(std::span<const SessionRecord> s, int d_img) {
  std::ostringstream os;
  write_dataset(os, s, d_img);
  return os.str();
}

std::vector<std::string> fields(const std::string &line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string f; is >> f;)
    out.push_back(f);
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

} // namespace

TEST(Synth, DefaultsDescribeTheFullCorpus) {
  const SynthConfig c;
  EXPECT_EQ(c.n_sessions, 551);
  EXPECT_EQ(c.frames_per_session, 60);
  EXPECT_EQ(c.frame_rate, 6.0);
  EXPECT_EQ(c.coupling, 0.75);
}

TEST(Synth, SessionsAreWellFormed) {
  SynthConfig c = mmguide::testing::toy_synth(11);
  c.n_sessions = 30;
  c.frames_per_session = 40;
  const auto data = generate_dataset(c);
  ASSERT_EQ(data.size(), 30u);
  std::set<Plane> planes;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto &s = data[i];
    EXPECT_EQ(s.header.id, i);
    planes.insert(s.header.plane);
    ASSERT_EQ(s.frames.size(), 40u);
    EXPECT_NO_THROW(validate_session(s));
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
      EXPECT_DOUBLE_EQ(s.frames[t].time, t / 6.0);
      EXPECT_EQ(s.frames[t].image.size(), 6);
      EXPECT_LE(s.frames[t].gaze.cwiseAbs().maxCoeff(), kGazeLimit);
    }
    const double start = angle_between(s.frames.front().orientation, s.header.target);
    EXPECT_GT(start, 25.0);
    EXPECT_LT(start, 65.0);
  }
  EXPECT_EQ(planes.size(), 3u);
}

TEST(Synth, ProbeConvergesToTarget) {
  SynthConfig c;
  c.n_sessions = 100;
  c.d_img = 4;
  c.seed = 12;
  for (const auto &s : generate_dataset(c))
    EXPECT_LT(angle_between(s.frames.back().orientation, s.header.target), 5.0);
}

TEST(Synth, ProbeApproachIsCoarseThenFine) {
  SynthConfig c;
  c.n_sessions = 20;
  c.d_img = 4;
  c.seed = 13;
  for (const auto &s : generate_dataset(c)) {
    bool fine_seen = false;
    int returns = 0;
    for (const auto &f : s.frames) {
      const bool fine = angle_between(f.orientation, s.header.target) <= 10.0;
      if (fine_seen && !fine)
        ++returns;
      fine_seen = fine_seen || fine;
    }
    EXPECT_TRUE(fine_seen);
    EXPECT_LE(returns, 2);
  }
}

TEST(Synth, IsDeterministicPerSeed) {
  SynthConfig c = mmguide::testing::toy_synth(14);
  const auto a = generate_dataset(c), b = generate_dataset(c);
  EXPECT_EQ(a, b);
  c.seed = 15;
  EXPECT_NE(generate_dataset(c), a);
  // Session i does not depend on how many sessions precede it.
  c.seed = 14;
  c.n_sessions = 3;
  const auto prefix = generate_dataset(c);
  EXPECT_EQ(prefix[2], a[2]);
}

TEST(Synth, UncoupledGazeIgnoresProbe) {
  SynthConfig c;
  c.coupling = 0.0;
  c.n_sessions = 170; // > 1e4 frame pairs
  c.d_img = 2;
  c.seed = 16;
  EXPECT_LE(std::abs(gaze_probe_coupling(generate_dataset(c))), 0.05);
}

TEST(Synth, CouplingIncreasesWithKappa) {
  std::vector<double> med;
  for (double kappa : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    std::vector<double> r;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      SynthConfig c;
      c.coupling = kappa;
      c.n_sessions = 20;
      c.d_img = 2;
      c.seed = 100 + seed;
      r.push_back(gaze_probe_coupling(generate_dataset(c)));
    }
    med.push_back(median(r));
  }
  for (std::size_t i = 1; i < med.size(); ++i)
    EXPECT_GT(med[i], med[i - 1]) << "kappa index " << i;
}

TEST(Synth, FuzzedConfigsProduceValidSessions) {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    SynthConfig c;
    c.n_sessions = 1;
    c.frames_per_session = std::uniform_int_distribution<int>(2, 30)(rng);
    c.d_img = std::uniform_int_distribution<int>(1, 8)(rng);
    c.coarse_fraction = uniform(rng, 0.05, 0.95);
    c.gaze_noise = uniform(rng, 0.0, 0.05);
    c.probe_noise_deg = uniform(rng, 0.0, 3.0);
    c.saccade_rate = uniform(rng, 0.0, 1.0);
    c.saccade_min = uniform(rng, 0.0, 0.1);
    c.saccade_max = c.saccade_min + uniform(rng, 0.0, 0.2);
    c.pursuit_gain = uniform(rng, 0.0, 5.0);
    c.lead_gain = uniform(rng, 0.0, 1.0);
    c.centering = uniform(rng, 0.0, 1.0);
    c.image_noise = uniform(rng, 0.0, 1.0);
    c.coupling = uniform(rng, 0.0, 1.0);
    c.seed = rng();
    const auto data = generate_dataset(c);
    ASSERT_EQ(data.size(), 1u);
    ASSERT_NO_THROW(validate_session(data[0])) << "config " << i;
    for (const auto &f : data[0].frames)
      ASSERT_TRUE(f.image.allFinite() && f.gaze.allFinite());
  }
}

TEST(Synth, RejectsInvalidConfig) {
  SynthConfig c;
  c.coupling = 1.5;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.frames_per_session = 1;
  EXPECT_THROW(generate_dataset(c), InvalidArgument);
  c = {};
  c.saccade_max = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.n_sessions = -1;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(DatasetFile, EmptyListRoundTrips) {
  const std::string text = serialize({}, 32);
  EXPECT_EQ(text, "mmguide-dataset 1 32 0\n");
  std::istringstream is(text);
  EXPECT_TRUE(read_dataset(is).empty());
}

TEST(DatasetFile, FullCorpusRoundTripsByteIdentical) {
  const SynthConfig c; // 551 x 60
  const auto data = generate_dataset(c);
  const std::string text = serialize(data, c.d_img);
  std::istringstream is(text);
  const auto back = read_dataset(is);
  EXPECT_EQ(back, data);
  EXPECT_EQ(serialize(back, c.d_img), text);
}

TEST(DatasetFile, FileRoundTrip) {
  const mmguide::testing::TempDir dir("synth");
  const auto data = generate_dataset(mmguide::testing::toy_synth(18));
  write_dataset(dir / "d.txt", data, 6);
  EXPECT_EQ(read_dataset(dir / "d.txt"), data);
  EXPECT_THROW(read_dataset(dir / "missing.txt"), std::runtime_error);
}

TEST(DatasetFile, CorruptedQuaternionNamesLine) {
  SynthConfig c = mmguide::testing::toy_synth(19);
  c.n_sessions = 2;
  c.frames_per_session = 3;
  std::string text = serialize(generate_dataset(c), c.d_img);
  // Line 7 is the second frame of the second session.
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);)
    lines.push_back(l);
  ASSERT_EQ(lines[5].substr(0, 2), "S ");
  auto f = fields(lines[6]);
  f[4] = "0.9";
  f[5] = "0.3";
  std::string joined;
  for (const auto &x : f)
    joined += (joined.empty() ? "" : " ") + x;
  lines[6] = joined;
  std::string corrupted;
  for (const auto &l : lines)
    corrupted += l + "\n";
  std::istringstream is(corrupted);
  try {
    read_dataset(is);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError &e) {
    EXPECT_EQ(e.line(), 7u);
  }
}

TEST(DatasetFile, MalformedInputIsRejected) {
  auto parse = [](const std::string &s) {
    std::istringstream is(s);
    return read_dataset(is);
  };
  EXPECT_THROW(parse(""), ParseError);
  EXPECT_THROW(parse("other 1 2 0\n"), ParseError);
  EXPECT_THROW(parse("mmguide-dataset 2 2 0\n"), ParseError);
  EXPECT_THROW(parse("mmguide-dataset 1 2 1\n"), ParseError);
  EXPECT_THROW(parse("mmguide-dataset 1 2 0\nF 0 0 0 1 0 0 0 1 2\n"),
               ParseError);
  EXPECT_THROW(parse("mmguide-dataset 1 1 1\nS 0 XYZ 1 6 1 0 0 0\n"),
               ParseError);
  EXPECT_THROW(parse("mmguide-dataset 1 1 1\nS 0 TVP 2 6 1 0 0 0\n"
                     "F 0 0 0 1 0 0 0 1\n"),
               ParseError);
  try {
    parse("mmguide-dataset 1 1 1\nS 0 TVP 2 6 1 0 0 0\nF 0 0 0 1 0 0 0 1\n"
          "F 0 0 0 1 0 0 0 1\n");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError &e) {
    EXPECT_EQ(e.line(), 4u);
  }
  EXPECT_THROW(parse("mmguide-dataset 1 1 1\nS 0 TVP 1 6 1 0 0 0\n"
                     "F 0 0.7 0 1 0 0 0 1\n"),
               ValidationError);
}

TEST(Split, EightyTwentyDisjointDeterministic) {
  SynthConfig c = mmguide::testing::toy_synth(20);
  c.n_sessions = 551;
  c.frames_per_session = 2;
  const auto data = generate_dataset(c);
  const auto [train, test] = split_train_test(data, 0.8, 5);
  EXPECT_EQ(train.size(), 441u);
  EXPECT_EQ(test.size(), 110u);
  std::set<std::uint64_t> ids;
  for (const auto &s : train)
    ids.insert(s.header.id);
  for (const auto &s : test)
    EXPECT_FALSE(ids.count(s.header.id));
  const auto again = split_train_test(data, 0.8, 5);
  EXPECT_EQ(again.first, train);
  EXPECT_NE(split_train_test(data, 0.8, 6).first, train);
  EXPECT_THROW(split_train_test(data, 1.0, 5), InvalidArgument);
  EXPECT_THROW(split_train_test(std::span(data).first(1), 0.8, 5),
               InvalidArgument);
}
