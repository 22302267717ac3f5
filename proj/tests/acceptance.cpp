// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "dskd/checkpoint.hpp"
#include "dskd/data.hpp"
#include "dskd/losses.hpp"
#include "dskd/metrics.hpp"
#include "dskd/scoring.hpp"
#include "dskd/trainer.hpp"
#include "oracles.hpp"

using namespace dskd;
namespace fs = std::filesystem;

namespace {

// Tolerances and floors.
constexpr double kIdentityTol = 1e-9;
constexpr double kRowSumTol = 1e-6;
constexpr double kScaleTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kOracleTol = 1e-6;
constexpr double kFixtureTol = 1e-9;
constexpr double kNormalizerTol = 1e-6;
constexpr double kCombinedSlack = 0.02;
constexpr double kLossSuiteSeconds = 30.0;
constexpr double kToyCpuSeconds = 600.0;
// Regression floors pinned from the seed-0 reference run (combined mode:
// structural 0.930, logical 0.950), rounded down by a 0.03 margin.
constexpr double kStructuralFloor = 0.90;
constexpr double kLogicalFloor = 0.92;
constexpr int kAblationEpochs = 20;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  std::string failed;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      failed += " [failed: " + what + "]";
    }
  }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::array<Shape, 3> random_shapes(std::mt19937_64& rng, int max_side = 4, int max_c = 8) {
  std::uniform_int_distribution<int> side(1, max_side), ch(1, max_c);
  std::array<Shape, 3> s;
  for (auto& x : s) x = {side(rng), side(rng), ch(rng)};
  return s;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Outcome o;
  const TrainConfig c;
  o.check(c.learning_rate == 0.005, "learning rate 0.005");
  o.check(c.adam_betas[0] == 0.5 && c.adam_betas[1] == 0.999, "Adam betas (0.5, 0.999)");
  o.check(c.epochs == 200, "200 epochs");
  o.check(c.batch_size == 16, "batch size 16");
  o.check(c.image_size == 256, "input 256x256");
  o.check(c.temperature == 1.0, "temperature 1");
  o.check(c.gccb && c.gccb_channels == 1024, "GCCB with g = 1024");
  o.check(c.gaussian_sigma == 4.0, "Gaussian sigma 4");
  o.check(c.teacher == TeacherKind::PretrainedWideResidual, "pretrained wide-residual teacher");
  o.check(c.has(StudentRole::Local) && c.has(StudentRole::Global), "both students");
  const auto shapes = wide_residual_stage_shapes(256);
  o.check(shapes[0] == Shape{64, 64, 256} && shapes[2] == Shape{16, 16, 1024},
          "wide-residual stage shapes at 256");
  o.detail << "full-scale defaults asserted; published mean AU-sPRO 0.730 / AUROC 0.840 need the"
              " real benchmark, pretrained weights and GPU training and are not reproduced here";
  return o;
}

Outcome criterion2() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2002);

  double worst_identity = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const FeaturePyramid t = oracle::random_pyramid(random_shapes(rng, 6, 8), rng);
    worst_identity = std::max({worst_identity, std::abs(local_loss(t, t)),
                               std::abs(global_loss(t, t, 1.0, nullptr, 32))});
  }
  o.check(worst_identity < kIdentityTol, "identity-zero");

  int negatives = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto shapes = random_shapes(rng);
    const FeaturePyramid t = oracle::random_pyramid(shapes, rng);
    const FeaturePyramid s = oracle::random_pyramid(shapes, rng);
    const double temp = std::array{0.1, 1.0, 10.0}[trial % 3];
    negatives += local_loss(t, s) < 0.0;
    negatives += global_loss(t, s, temp) < 0.0;
  }
  o.check(negatives == 0, "non-negativity");

  double worst_row = 0.0;
  int argmax_changes = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor t = oracle::random_tensor({4, 4, 6}, rng);
    const Tensor s = oracle::random_tensor({4, 4, 6}, rng);
    std::vector<Eigen::Index> reference;
    for (double temp : {0.1, 1.0, 10.0}) {
      for (const AffinityMatrix& a : {teacher_affinity(t, temp), student_affinity(s, t, temp)}) {
        worst_row = std::max(worst_row, (a.rows.rowwise().sum().array() - 1.0).abs().maxCoeff());
      }
      const AffinityMatrix a = student_affinity(s, t, temp);
      std::vector<Eigen::Index> arg(a.n());
      for (int i = 0; i < a.n(); ++i) a.rows.row(i).maxCoeff(&arg[i]);
      if (reference.empty()) reference = arg;
      argmax_changes += arg != reference;
    }
  }
  o.check(worst_row < kRowSumTol, "row sums");
  o.check(argmax_changes == 0, "temperature argmax invariance");

  double worst_scale = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto shapes = random_shapes(rng);
    const FeaturePyramid t = oracle::random_pyramid(shapes, rng);
    FeaturePyramid s = oracle::random_pyramid(shapes, rng);
    const double before = global_loss(t, s, 1.0);
    std::uniform_real_distribution<double> scale(0.05, 20.0);
    for (Tensor& level : s.levels) {
      for (int p = 0; p < level.shape().positions(); ++p) {
        const double k = scale(rng);
        for (double& v : level.pixel(p)) v *= k;
      }
    }
    worst_scale = std::max(worst_scale, std::abs(global_loss(t, s, 1.0) - before));
  }
  o.check(worst_scale < kScaleTol, "cosine scale invariance");

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.check(seconds < kLossSuiteSeconds, "runtime");
  o.detail << "identity " << sci(worst_identity) << ", negatives " << negatives << "/2000, row-sum "
           << sci(worst_row) << ", argmax changes " << argmax_changes << ", scale "
           << sci(worst_scale) << ", " << fmt(seconds, 2) << " s";
  return o;
}

Outcome criterion3() {
  Outcome o;
  std::mt19937_64 rng(3003);
  double worst_local = 0.0, worst_global = 0.0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    const auto shapes = random_shapes(rng);
    const FeaturePyramid t = oracle::random_pyramid(shapes, rng);
    const FeaturePyramid s = oracle::random_pyramid(shapes, rng);
    const double temp = std::array{0.5, 1.0, 2.0}[trial % 3];

    std::array<Tensor, 3> g;
    local_loss(t, s, &g);
    const auto ng = oracle::numeric_gradient([&](const FeaturePyramid& x) { return local_loss(t, x); }, s);
    worst_local = std::max(worst_local, oracle::relative_error(g, ng));

    global_loss(t, s, temp, &g, 3);
    const auto ngg = oracle::numeric_gradient(
        [&](const FeaturePyramid& x) { return global_loss(t, x, temp); }, s);
    worst_global = std::max(worst_global, oracle::relative_error(g, ngg));
  }
  o.check(worst_local < kGradTol, "local gradient");
  o.check(worst_global < kGradTol, "global gradient");
  o.detail << trials << " trials, worst relative error local " << sci(worst_local) << ", global "
           << sci(worst_global);
  return o;
}

EvalRecord fixture_record() {
  EvalRecord r;
  r.label = ImageLabel::Structural;
  r.anomaly_map = ScoreMap(4, 4, ScoreKind::Fused, 0.0);
  r.anomaly_map.at(0, 0) = 1.0;
  r.anomaly_map.at(3, 3) = 1.0;
  DefectRegion reg;
  reg.mask = Mask(4, 4);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) reg.mask.at(y, x) = 1;
  reg.saturation_threshold = 2.0;
  r.regions.push_back(reg);
  return r;
}

Outcome criterion4() {
  Outcome o;
  std::mt19937_64 rng(4004);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 1 + trial % 8, w = 1 + (trial * 3) % 8;  // N up to 64
    const Tensor t = oracle::random_tensor({h, w, 5}, rng);
    const Tensor s = oracle::random_tensor({h, w, 5}, rng);
    const double temp = std::array{0.3, 1.0, 4.0}[trial % 3];
    const auto at = teacher_affinity(t, temp);
    const auto as = student_affinity(s, t, temp);
    const auto ot = oracle::affinity(t, t, temp);
    const auto os = oracle::affinity(s, t, temp);
    for (int i = 0; i < h * w; ++i) {
      for (int j = 0; j < h * w; ++j) {
        worst = std::max({worst, std::abs(at.rows(i, j) - ot[i][j]), std::abs(as.rows(i, j) - os[i][j])});
      }
    }
    const auto kl = affinity_kl_map(at, as).values;
    const auto chunked = global_score_map(t, s, temp, 7).values;
    const auto okl = oracle::kl_map(t, s, temp);
    const auto cos = cosine_score_map(t, s).values;
    const auto ocos = oracle::cosine_map(t, s);
    for (std::size_t i = 0; i < okl.size(); ++i) {
      worst = std::max({worst, std::abs(kl[i] - okl[i]), std::abs(chunked[i] - okl[i]),
                        std::abs(cos[i] - ocos[i])});
    }
  }
  o.check(worst < kOracleTol, "affinity/KL/cosine oracles");

  int auroc_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 41;
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (int i = 0; i < n; ++i) {
      s[i] = trial % 2 ? std::uniform_int_distribution<int>(0, 5)(rng)
                       : std::uniform_real_distribution<double>(0, 1)(rng);
      l[i] = std::uniform_int_distribution<int>(0, 1)(rng);
    }
    l[0] = 0;
    l[1] = 1;
    auroc_mismatch += auroc(s, l) != oracle::auroc_pairs(s, l);
  }
  o.check(auroc_mismatch == 0, "AUROC pair counting");

  const std::vector<EvalRecord> recs = {fixture_record()};
  const CurvePoint p = spro_at_threshold(recs, 0.5);
  const double fixture_err = std::max(std::abs(p.fpr - 1.0 / 12.0), std::abs(p.spro - 0.5));
  const std::vector<CurvePoint> linear = {{0.0, 0.0}, {0.05, 1.0}};
  const double area_err = std::abs(au_spro(linear, 0.05).value - 0.5);
  const auto curve = spro_curve(recs, 16);
  // (0,0) -> (1/12, 0.5): sPRO 0.3 at FPR 0.05, normalised area 0.15
  const double curve_err = std::abs(au_spro(curve, 0.05).value - 0.15);
  o.check(std::max({fixture_err, area_err, curve_err}) < kFixtureTol, "sPRO fixtures");
  o.detail << "oracle max diff " << sci(worst) << ", AUROC mismatches " << auroc_mismatch
           << "/100, sPRO fixture diff " << sci(std::max({fixture_err, area_err, curve_err}));
  return o;
}

struct ModeScores {
  double structural = 0, logical = 0, mean = 0;
};

ModeScores scores_of(const Evaluation& e) {
  const auto& r = e.report;
  if (!r.auroc_structural.value || !r.auroc_logical.value) throw std::runtime_error("undefined AUROC");
  return {*r.auroc_structural.value, *r.auroc_logical.value, *r.auroc_mean.value};
}

std::string describe(const char* name, const ModeScores& s) {
  return std::string(name) + " " + fmt(s.structural, 3) + "/" + fmt(s.logical, 3) + "/" + fmt(s.mean, 3);
}

struct ToyRun {
  DatasetSplit data;
  Checkpoint ckpt;
};

Outcome criterion5(ToyRun& run) {
  Outcome o;
  const std::clock_t c0 = std::clock();
  ToySceneConfig scenes;  // k = 3, 64 x 64, 200 / 40 / 60
  run.data = synth_toy_dataset(scenes);
  const TrainConfig config = TrainConfig::toy();
  run.ckpt = train(run.data, config);
  const ModeScores loc = scores_of(evaluate(run.ckpt, run.data, {FusionMode::Local}));
  const ModeScores glo = scores_of(evaluate(run.ckpt, run.data, {FusionMode::Global}));
  const ModeScores com = scores_of(evaluate(run.ckpt, run.data, {FusionMode::Combined}));
  const double cpu = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;

  o.check(loc.structural > loc.logical, "(a) local structural > local logical");
  o.check(glo.logical > loc.logical, "(b) global logical > local logical");
  o.check(com.mean >= std::max(loc.mean, glo.mean) - kCombinedSlack,
          "(c) combined mean >= best single - 0.02");
  o.check(com.structural >= kStructuralFloor, "combined structural floor");
  o.check(com.logical >= kLogicalFloor, "combined logical floor");
  o.check(cpu <= kToyCpuSeconds, "CPU budget");
  o.detail << "AUROC struct/logic/mean: " << describe("local", loc) << ", " << describe("global", glo)
           << ", " << describe("combined", com) << "; " << fmt(cpu, 0) << " CPU-s";
  return o;
}

Outcome criterion6(const ToyRun& run) {
  Outcome o;
  std::ostringstream seeds;
  int held = 0;
  double sum_with = 0, sum_without = 0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    ToySceneConfig scenes;
    scenes.seed = seed;
    const DatasetSplit data = seed == 0 ? run.data : synth_toy_dataset(scenes);
    double logical[2];
    for (bool gccb : {true, false}) {
      if (seed == 0 && gccb) {
        // students train independently, so the criterion 5 run already holds this model
        logical[0] = scores_of(evaluate(run.ckpt, data, {FusionMode::Global})).logical;
        continue;
      }
      TrainConfig c = TrainConfig::toy();
      c.seed = seed;
      c.epochs = kAblationEpochs;
      c.students = {StudentRole::Global};
      c.gccb = gccb;
      const Checkpoint ckpt = train(data, c);
      logical[gccb ? 0 : 1] = scores_of(evaluate(ckpt, data, {FusionMode::Global})).logical;
    }
    held += logical[0] >= logical[1];
    sum_with += logical[0];
    sum_without += logical[1];
    seeds << " seed " << seed << ": " << fmt(logical[0], 3) << " vs " << fmt(logical[1], 3) << ";";
  }
  o.check(held == 3, "GCCB logical AUROC >= no-GCCB on every seed");
  o.detail << "global logical AUROC with vs without GCCB (" << kAblationEpochs << " epochs):"
           << seeds.str() << " trend holds on " << held << "/3, means " << fmt(sum_with / 3, 3)
           << " vs " << fmt(sum_without / 3, 3);
  return o;
}

Outcome criterion7(const ToyRun& run, const fs::path& work) {
  Outcome o;
  // Smaller configuration keeps the repeated training cheap.
  ToySceneConfig scenes;
  scenes.train_count = 24;
  scenes.validation_count = 6;
  scenes.test_count = 12;
  scenes.seed = 77;
  const DatasetSplit data = synth_toy_dataset(scenes);
  TrainConfig c = TrainConfig::toy();
  c.epochs = 3;
  c.seed = 77;
  const auto a = serialize_checkpoint(train(data, c));
  const auto b = serialize_checkpoint(train(data, c));
  o.check(a == b, "bitwise-identical checkpoints");
  const Checkpoint ca = deserialize_checkpoint(a);
  const std::string ma = evaluate(ca, data, {}).report.to_json();
  const std::string mb = evaluate(deserialize_checkpoint(b), data, {}).report.to_json();
  o.check(ma == mb, "identical metrics");

  const fs::path root = work / "loco_roundtrip";
  fs::remove_all(root);
  write_loco_layout(run.data, root.string());
  const DatasetSplit back = load_loco_layout(root.string(), run.data.category, run.data.image_size);
  const bool same = back.train == run.data.train && back.validation == run.data.validation &&
                    back.test == run.data.test;
  o.check(same, "LOCO write/load round trip");

  const fs::path ckpt_path = work / "toy.ckpt";
  save_checkpoint(run.ckpt, ckpt_path.string());
  const Checkpoint reloaded = load_checkpoint(ckpt_path.string());
  o.check(evaluate(reloaded, run.data, {}).report.to_json() ==
              evaluate(run.ckpt, run.data, {}).report.to_json(),
          "checkpoint file round trip");
  o.detail << "checkpoint " << a.size() << " bytes identical: " << (a == b ? "yes" : "no")
           << ", " << back.train.size() + back.validation.size() + back.test.size()
           << " records round-tripped: " << (same ? "identical" : "different");
  return o;
}

Outcome criterion8() {
  Outcome o;
  std::mt19937_64 rng(8008);
  std::uniform_real_distribution<double> u(-3.0, 7.0);
  std::vector<ScoreMap> loc, glo;
  for (int i = 0; i < 6; ++i) {
    ScoreMap a(9, 11, ScoreKind::Cosine), b(9, 11, ScoreKind::AffinityKl);
    for (double& v : a.values) v = u(rng);
    for (double& v : b.values) v = 0.1 * u(rng) * u(rng);
    loc.push_back(a);
    glo.push_back(b);
  }
  const Normalizer n = fit_normalizer(loc, glo);
  double worst = 0.0;
  for (int which = 0; which < 2; ++which) {
    double sum = 0, sq = 0;
    std::size_t count = 0;
    for (const ScoreMap& m : which ? glo : loc) {
      const ScoreMap z = which ? normalize_single(m, n.mu_glo, n.sigma_glo, n)
                               : normalize_single(m, n.mu_loc, n.sigma_loc, n);
      for (double v : z.values) {
        sum += v;
        sq += v * v;
        ++count;
      }
    }
    const double mean = sum / count;
    worst = std::max({worst, std::abs(mean), std::abs(std::sqrt(sq / count - mean * mean) - 1.0)});
  }
  o.check(worst < kNormalizerTol, "normalizer mean 0 / std 1");

  int max_mismatch = 0, raised = 0;
  for (int trial = 0; trial < 200; ++trial) {
    ScoreMap m(3 + trial % 17, 2 + trial % 13, ScoreKind::Fused);
    for (double& v : m.values) v = u(rng);
    const double mx = *std::max_element(m.values.begin(), m.values.end());
    max_mismatch += image_score(m, 0.0) != mx;
    raised += image_score(m, 0.25 + 0.25 * (trial % 20)) > mx;
  }
  o.check(max_mismatch == 0, "sigma 0 gives the exact max");
  o.check(raised == 0, "smoothing never raises the max");
  o.detail << "normalizer deviation " << sci(worst) << ", sigma-0 mismatches " << max_mismatch
           << "/200, raised maxima " << raised << "/200";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "dskd_acceptance";
  std::set<int> known;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work-dir" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--known-failure" && i + 1 < argc) {
      known.insert(std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--work-dir DIR] [--known-failure N]...\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(work);

  int failures = 0;
  std::vector<int> failed;
  ToyRun run;
  const auto report = [&](int id, const char* title, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    if (!o.pass) {
      failed.push_back(id);
      failures += !known.count(id);
    }
    std::printf("%s %d %s: %s%s\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.str().c_str(),
                o.failed.c_str());
    std::fflush(stdout);
  };

  report(1, "full-scale recipe", criterion1);
  report(2, "loss invariants", criterion2);
  report(3, "gradient verification", criterion3);
  report(4, "oracle equivalence", criterion4);
  report(5, "toy end-to-end", [&] { return criterion5(run); });
  report(6, "GCCB ablation", [&] { return criterion6(run); });
  report(7, "determinism and round trip", [&] { return criterion7(run, work); });
  report(8, "scoring pipeline", criterion8);
  std::printf("%zu/8 criteria passed", 8 - failed.size());
  if (!failed.empty()) {
    std::printf("; failed:");
    for (int id : failed) std::printf(" %d%s", id, known.count(id) ? " (known)" : "");
  }
  std::printf("\n");
  return failures == 0 ? 0 : 1;
}
