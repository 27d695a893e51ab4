#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "pargan/data.hpp"
#include "support.hpp"

using namespace pargan;
using testing_support::scratch_dir;

namespace {

Manifest unlabeled(const std::string& domain, const std::vector<std::string>& paths) {
  Manifest m;
  for (const auto& p : paths) m.records.push_back({p, domain, std::nullopt});
  return m;
}

Manifest labeled(std::vector<std::vector<double>> ps, std::size_t dims) {
  Manifest m;
  for (std::size_t a = 0; a < dims; ++a) m.axes.push_back({"a" + std::to_string(a), 0.0, 1.0, ""});
  for (std::size_t i = 0; i < ps.size(); ++i) m.records.push_back({"y" + std::to_string(i) + ".png", "t", ps[i]});
  return m;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::internal;
}

}  // namespace

TEST(Parametrization, RejectsOutOfRangeInsteadOfClamping) {
  const auto axes = unit_axes({"x"});
  EXPECT_EQ(Parametrization::make({0.4}, axes).values[0], 0.4);
  EXPECT_EQ(code_of([&] { Parametrization::make({1.2}, axes); }), ErrorCode::validation);
  EXPECT_EQ(code_of([&] { Parametrization::make({0.1, 0.2}, axes); }), ErrorCode::validation);
  EXPECT_EQ(code_of([&] { Parametrization::make({std::nan("")}, axes); }), ErrorCode::validation);
}

TEST(SoftLabels, SingleTargetGetsOne) {
  const auto out = build_soft_labels(unlabeled("s", {"a.png"}), {unlabeled("t", {"b.png"})});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out.axes.size(), 1u);
  EXPECT_EQ(out.records[0].image_path, "a.png");
  EXPECT_EQ(*out.records[0].p, std::vector<double>{0.0});
  EXPECT_EQ(*out.records[1].p, std::vector<double>{1.0});
}

TEST(SoftLabels, OneHotForThreeTargets) {
  const auto out = build_soft_labels(unlabeled("s", {"a.png"}), {unlabeled("t1", {"b.png"}),
                                                                 unlabeled("t2", {"c.png", "d.png"}),
                                                                 unlabeled("t3", {"e.png"})});
  ASSERT_EQ(out.size(), 5u);
  for (const auto& r : out.records)
    if (r.image_path == "c.png") EXPECT_EQ(*r.p, (std::vector<double>{0, 1, 0}));
  EXPECT_TRUE(validate_target_manifest(out).empty());
}

TEST(SoftLabels, SizeAndOneHotProperties) {
  std::mt19937_64 rng(30);
  std::uniform_int_distribution<int> n(1, 6);
  for (int c = 0; c < 20; ++c) {
    const int k = n(rng);
    const int ns = n(rng);
    std::vector<std::string> sp;
    for (int i = 0; i < ns; ++i) sp.push_back("s" + std::to_string(i));
    std::vector<Manifest> targets;
    std::size_t total = ns;
    for (int j = 0; j < k; ++j) {
      std::vector<std::string> tp;
      const int nt = n(rng);
      for (int i = 0; i < nt; ++i) tp.push_back("t" + std::to_string(j) + "_" + std::to_string(i));
      total += nt;
      targets.push_back(unlabeled("d" + std::to_string(j), tp));
    }
    const auto out = build_soft_labels(unlabeled("src", sp), targets);
    ASSERT_EQ(out.size(), total);
    int zeros = 0;
    for (const auto& r : out.records) {
      ASSERT_EQ(r.p->size(), static_cast<std::size_t>(k));
      double sum = 0;
      for (double v : *r.p) sum += v;
      if (sum == 0.0) {
        ++zeros;
        EXPECT_EQ(r.domain, "src");
        continue;
      }
      const int j = std::stoi(r.domain.substr(1));
      for (int a = 0; a < k; ++a) EXPECT_EQ((*r.p)[a], a == j ? 1.0 : 0.0);
    }
    EXPECT_EQ(zeros, ns);
  }
}

TEST(SoftLabels, Errors) {
  EXPECT_EQ(code_of([] { build_soft_labels(unlabeled("s", {"a.png"}), {}); }), ErrorCode::validation);
  EXPECT_EQ(code_of([] { build_soft_labels(unlabeled("s", {}), {unlabeled("t", {"b.png"})}); }),
            ErrorCode::validation);
  EXPECT_EQ(code_of([] { build_soft_labels(unlabeled("s", {"a.png"}), {unlabeled("t", {})}); }),
            ErrorCode::validation);
  try {
    build_soft_labels(unlabeled("s", {"a.png"}), {unlabeled("t", {"b.png", "a.png"})});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("a.png"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("source"), std::string::npos);
  }
  Manifest pre = unlabeled("s", {"a.png"});
  pre.records[0].p = std::vector<double>{0.0};
  EXPECT_THROW(build_soft_labels(pre, {unlabeled("t", {"b.png"})}), Error);
}

TEST(Sampling, DeterministicGivenState) {
  const auto src = unlabeled("s", {"a", "b", "c"});
  const auto tgt = labeled({{0.1}, {0.2}, {0.3}, {0.4}}, 1);
  Rng r1(5), r2(5);
  for (int i = 0; i < 50; ++i) {
    const auto a = sample_training_tuple(src, tgt, r1), b = sample_training_tuple(src, tgt, r2);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.y, b.y);
    EXPECT_EQ(a.p.values, b.p.values);
    EXPECT_EQ(a.p.values, *a.y.p);
  }
}

TEST(Sampling, SingletonTarget) {
  const auto tgt = labeled({{0.3}}, 1);
  Rng rng(6);
  for (int i = 0; i < 20; ++i)
    EXPECT_EQ(sample_training_tuple(unlabeled("s", {"a", "b"}), tgt, rng).p.values, std::vector<double>{0.3});
}

TEST(Sampling, SourceMarginalIsUniform) {
  const auto src = unlabeled("s", {"a", "b", "c", "d"});
  const auto tgt = labeled({{0.5}}, 1);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    std::map<std::string, int> counts;
    const int n = 10000;
    for (int i = 0; i < n; ++i) ++counts[sample_training_tuple(src, tgt, rng).x.image_path.string()];
    ASSERT_EQ(counts.size(), 4u);
    double chi2 = 0;
    const double sd = std::sqrt(n * 0.25 * 0.75);
    for (const auto& [k, c] : counts) {
      EXPECT_GE(c / double(n), 0.22) << k;
      EXPECT_LE(c / double(n), 0.28) << k;
      EXPECT_LE(std::abs(c - n * 0.25), 3 * sd) << k;
      chi2 += (c - n * 0.25) * (c - n * 0.25) / (n * 0.25);
    }
    // 3 degrees of freedom, 0.999 quantile
    EXPECT_LT(chi2, 16.27);
  }
}

TEST(Sampling, MissingTargetParametrization) {
  Manifest tgt = labeled({{0.5}}, 1);
  tgt.records[0].p.reset();
  Rng rng(7);
  EXPECT_EQ(code_of([&] { sample_training_tuple(unlabeled("s", {"a"}), tgt, rng); }), ErrorCode::validation);
  EXPECT_EQ(code_of([&] { sample_training_tuple(unlabeled("s", {}), labeled({{0.5}}, 1), rng); }),
            ErrorCode::validation);
}

TEST(Validation, WellFormedIsClean) { EXPECT_TRUE(validate_manifest(labeled({{0.1, 0.2, 0.3}}, 3)).empty()); }

TEST(Validation, DimensionMismatchIsOneViolation) {
  const auto v = validate_manifest(labeled({{0.1, 0.2}}, 3));
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rule, "dimension");
  EXPECT_EQ(v[0].record, 0u);
}

TEST(Validation, RangeViolationNamesRecord) {
  const auto v = validate_manifest(labeled({{0.5}, {1.2}}, 1));
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rule, "range");
  EXPECT_EQ(v[0].record, 1u);
  EXPECT_NE(describe(v[0]).find("record 1"), std::string::npos);
}

TEST(Validation, OtherRules) {
  EXPECT_EQ(validate_manifest(Manifest{}).at(0).rule, "non_empty");
  Manifest dup = unlabeled("s", {"a.png", "./a.png"});
  EXPECT_EQ(validate_manifest(dup).at(0).rule, "duplicate_path");
  Manifest target = labeled({{0.5}}, 1);
  target.records.push_back({"z.png", "t", std::nullopt});
  EXPECT_TRUE(validate_manifest(target).empty());
  EXPECT_EQ(validate_target_manifest(target).at(0).rule, "missing_p");
  Manifest old = labeled({{0.5}}, 1);
  old.schema_version = 99;
  EXPECT_EQ(validate_manifest(old).at(0).rule, "schema_version");
}

TEST(ManifestFile, RoundTripWithRelativePaths) {
  const auto dir = scratch_dir("manifest_rt");
  Manifest m = labeled({{0.25, 0.5}, {1.0, 0.0}}, 2);
  m.axes[1].unit = "px";
  for (auto& r : m.records) r.image_path = dir / "img" / r.image_path;
  m.records.push_back({dir / "img" / "src.png", "s", std::nullopt});
  save_manifest(dir / "m.jsonl", m);
  std::ifstream in(dir / "m.jsonl");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(first.find(dir.string()), std::string::npos);  // stored relative
  const auto back = load_manifest(dir / "m.jsonl");
  EXPECT_EQ(back.axes, m.axes);
  EXPECT_EQ(back.records, m.records);
}

TEST(ManifestFile, IoErrorIsDistinctFromParseAndValidation) {
  EXPECT_EQ(code_of([] { load_manifest("/nonexistent/dir/m.jsonl"); }), ErrorCode::io);
  std::istringstream bad("{\"schema_version\": 1}\n{not json}\n");
  EXPECT_EQ(code_of([&] { parse_manifest(bad); }), ErrorCode::parse);
  std::istringstream no_header("");
  EXPECT_EQ(code_of([&] { parse_manifest(no_header); }), ErrorCode::parse);
  std::istringstream missing_path("{\"schema_version\": 1}\n{\"domain\": \"x\"}\n");
  EXPECT_EQ(code_of([&] { parse_manifest(missing_path); }), ErrorCode::parse);
}
