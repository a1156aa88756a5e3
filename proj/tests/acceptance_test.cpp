// Acceptance gate: eleven end-to-end guarantees about the toolkit, each
// printing exactly one PASS/FAIL line with its measured values. Every
// threshold is pinned in this file next to the check that uses it.

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvx/cli.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mvx;
using mvx::testing::TempDir;

namespace {

// The single line per criterion that this binary exists to print.
void verdict(int id, bool pass, const std::string& detail) {
  std::printf("[CRITERION %02d] %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  EXPECT_TRUE(pass) << "criterion " << id << ": " << detail;
}

// Runs the CLI with its chatter swallowed so the verdict lines stay readable.
int silent_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  std::streambuf* oo = std::cout.rdbuf(out.rdbuf());
  std::streambuf* oe = std::cerr.rdbuf(err.rdbuf());
  int rc = -1;
  try {
    rc = mvx::cli::run_cli(args);
  } catch (...) {
    std::cout.rdbuf(oo);
    std::cerr.rdbuf(oe);
    throw;
  }
  std::cout.rdbuf(oo);
  std::cerr.rdbuf(oe);
  if (rc != 0) ADD_FAILURE() << "cli failed: " << err.str();
  return rc;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in.is_open()) << "missing file: " << p;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::size_t> tree_digest(const fs::path& root) {
  std::map<std::string, std::size_t> digest;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    digest[fs::relative(entry.path(), root).generic_string()] =
        std::hash<std::string>{}(slurp(entry.path()));
  }
  return digest;
}

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Eigen::VectorXd cx = x.array() - x.mean();
  const Eigen::VectorXd cy = y.array() - y.mean();
  const double denom = std::sqrt(cx.squaredNorm() * cy.squaredNorm());
  return denom == 0.0 ? 0.0 : cx.dot(cy) / denom;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.backbone.conv_channels = {2, 4};
  mc.backbone.feature_dim = 8;
  mc.classifier_hidden = {16};
  return mc;
}

// Small corpus + small model shared by the CLI-level criteria.
constexpr const char* kTinyConfig = R"({
  "synthetic": {"n_samples": 16, "height": 32, "width": 32, "defect_intensity": 0.9,
                "texture_noise_sigma": 0.02, "style_gap": 1.0, "class_balance": 0.5},
  "model": {"arch": "csv", "pool": "max", "conv_channels": [2, 4], "feature_dim": 8,
            "activation": "relu", "classifier_hidden": [16]},
  "train": {"batch_size": 4, "epochs": 2, "learning_rate": 0.005, "train_fraction": 0.7},
  "heads": {"batch_size": 16, "epochs": 2, "learning_rate": 0.01},
  "explain": {"num_segments": 8, "lime_samples": 64, "shap_samples": 300},
  "eval": {"explain_metrics": false}
})";

std::vector<Image> random_views(Rng& rng, int n_views, int h, int w) {
  std::vector<Image> views;
  for (int v = 0; v < n_views; ++v) views.push_back(mvx::testing::random_image(h, w, rng));
  return views;
}

}  // namespace

// Two architectures trained under identical budgets on data whose view
// sub-groups have clearly distinct visual styles: the sub-group-aware model
// must beat the fully shared one by a clear margin, and the margin must
// disappear when the style separation is removed.
TEST(Acceptance, Criterion01SubgroupModelBeatsSharedModelUnderStyleSeparation) {
  constexpr double kMinMeanGapPoints = 3.0;   // SSG - CSV accuracy, style_gap = 1.0
  constexpr double kParityBandPoints = 3.0;   // |SSG - CSV| accuracy, style_gap = 0.0
  constexpr double kBudgetMinutes = 30.0;
  constexpr int kSeeds = 5;
  const auto t0 = std::chrono::steady_clock::now();

  ModelConfig mc;
  mc.backbone.conv_channels = {4, 8, 16};
  // Narrow feature head: with 200 training samples the wider dims let both
  // wirings memorize style quirks and the comparison drowns in seed noise.
  mc.backbone.feature_dim = 8;
  mc.pool = PoolMode::max;

  TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 60;
  // The 150-epoch recipe's 5e-5, scaled so the curves actually converge
  // inside the 60-epoch budget (linear scaling to 1.25e-4 leaves both
  // architectures at ~0.9 train accuracy).
  tc.learning_rate = 2.5e-4;

  const double gaps[2] = {1.0, 0.0};
  const ArchKind archs[2] = {ArchKind::CSV, ArchKind::SSG};
  double acc_mean[2][2] = {{0.0, 0.0}, {0.0, 0.0}};  // [gap][arch]
  double auc_mean[2][2] = {{0.0, 0.0}, {0.0, 0.0}};

  for (int gi = 0; gi < 2; ++gi) {
    for (int s = 1; s <= kSeeds; ++s) {
      SyntheticSpec spec;
      spec.schema = default_five_view_schema(32, 32);
      spec.n_samples = 260;  // stratified 200 train / 60 test at fraction 200/260
      spec.defect_intensity = 0.8;
      spec.texture_noise_sigma = 0.05;
      spec.class_balance = 0.5;
      spec.style_gap = gaps[gi];
      spec.seed = derive_seed(9000, static_cast<std::uint64_t>(s));
      const GeneratedData data = generate(spec);
      const auto [train_set, test_set] =
          split_dataset(data.dataset, 200.0 / 260.0, derive_seed(77, static_cast<std::uint64_t>(s)));
      ASSERT_EQ(train_set.samples.size(), 200u);
      ASSERT_EQ(test_set.samples.size(), 60u);

      for (int ai = 0; ai < 2; ++ai) {
        MultiViewModel model =
            build_model(archs[ai], spec.schema, mc, static_cast<std::uint64_t>(s));
        const TrainReport r =
            train_model(model, train_set, &test_set, tc, static_cast<std::uint64_t>(s));
        acc_mean[gi][ai] += r.final_test_acc / kSeeds;
        auc_mean[gi][ai] += r.final_test_auc / kSeeds;
      }
    }
  }

  const double gap_points = (acc_mean[0][1] - acc_mean[0][0]) * 100.0;
  const double parity_points = std::abs(acc_mean[1][1] - acc_mean[1][0]) * 100.0;
  const bool auc_ordered = auc_mean[0][1] >= auc_mean[0][0] - 1e-9;
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;

  const bool pass = gap_points >= kMinMeanGapPoints && auc_ordered &&
                    parity_points <= kParityBandPoints && minutes < kBudgetMinutes;
  std::ostringstream d;
  d << std::fixed << std::setprecision(1) << "style-separated: subgroup acc "
    << acc_mean[0][1] * 100 << "% vs shared " << acc_mean[0][0] * 100 << "% (margin "
    << gap_points << " pts, need >= " << kMinMeanGapPoints << "), AUC " << std::setprecision(3)
    << auc_mean[0][1] << " vs " << auc_mean[0][0] << "; no separation: |margin| "
    << std::setprecision(1) << parity_points << " pts (allow <= " << kParityBandPoints
    << "); " << std::setprecision(1) << minutes << " min (budget " << kBudgetMinutes << ")";
  verdict(1, pass, d.str());
}

// Kernel-weighted least squares over all coalitions must reproduce the
// brute-force Shapley values of arbitrary games, not just model-shaped ones.
TEST(Acceptance, Criterion02FullEnumerationKernelShapMatchesBruteForce) {
  constexpr double kPerSegmentTol = 1e-6;
  constexpr double kEfficiencyTol = 1e-9;
  constexpr int kGames = 20;

  double worst = 0.0, worst_eff = 0.0;
  for (int g = 0; g < kGames; ++g) {
    const int S = 4 + g % 7;  // cycles through 4..10
    Rng rng(derive_seed(4444, static_cast<std::uint64_t>(g)));
    std::vector<double> table(std::size_t{1} << S);
    for (auto& v : table) v = rng.uniform(-2.0, 2.0);
    const GameFn game = [&table](const Coalition& z) {
      std::uint32_t bits = 0;
      for (std::size_t s = 0; s < z.size(); ++s)
        if (z[s]) bits |= 1u << s;
      return table[bits];
    };

    const Eigen::VectorXd brute = exact_shapley_game(game, S);
    const Eigen::VectorXd kernel =
        kernel_shap_game(game, S, 0, 0, ShapMode::full_enumeration);
    worst = std::max(worst, (brute - kernel).cwiseAbs().maxCoeff());
    worst_eff =
        std::max(worst_eff, std::abs(kernel.sum() - (table.back() - table.front())));
  }

  const bool pass = worst <= kPerSegmentTol && worst_eff <= kEfficiencyTol;
  std::ostringstream d;
  d << std::scientific << std::setprecision(2) << kGames
    << " random games, S in 4..10: worst per-segment gap " << worst << " (tol "
    << kPerSegmentTol << "), worst efficiency residual " << worst_eff << " (tol "
    << kEfficiencyTol << ")";
  verdict(2, pass, d.str());
}

// A model that is exactly linear in the kept-segment indicators must be
// recovered coefficient-for-coefficient by the local surrogate fit.
TEST(Acceptance, Criterion03LimeRecoversPlantedLinearCoalitionModels) {
  constexpr double kMaxAbsError = 0.02;
  constexpr double kMinCorrelation = 0.99;
  constexpr int kModels = 5;
  constexpr int kSegments = 8;
  constexpr int kSamples = 2000;

  const Image img = mvx::testing::uniform_image(16, 16, 1.0);
  SegmentOptions so;
  so.num_segments = kSegments;
  const SegmentMask mask = segment(img, so, 0);
  ASSERT_EQ(mask.num_segments, kSegments);

  double worst_err = 0.0, worst_corr = 1.0;
  for (int m = 0; m < kModels; ++m) {
    Rng rng(derive_seed(600, static_cast<std::uint64_t>(m)));
    Eigen::VectorXd a(kSegments);
    for (int s = 0; s < kSegments; ++s) a(s) = rng.uniform(-0.4, 0.4);

    // Under a zeros baseline on a uniform white image, the per-segment mean
    // intensity IS the coalition bit, so this model is linear in z by design.
    const ModelFn fn = [&mask, a](const Image& in) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(a.size());
      Eigen::VectorXd cnt = Eigen::VectorXd::Zero(a.size());
      for (std::size_t p = 0; p < in.pix.size(); ++p) {
        sum(mask.ids[p]) += in.pix[p];
        cnt(mask.ids[p]) += 1.0;
      }
      const double y = 0.3 + a.dot((sum.array() / cnt.array()).matrix());
      Eigen::VectorXd out(2);
      out << 1.0 - y, y;
      return out;
    };

    LimeOptions lo;
    lo.n_samples = kSamples;
    lo.baseline = BaselineMode::zeros;
    const AttributionMap attr =
        lime_explain(fn, img, mask, 1, lo, derive_seed(601, static_cast<std::uint64_t>(m)));
    worst_err = std::max(worst_err, (attr.per_segment - a).cwiseAbs().maxCoeff());
    worst_corr = std::min(worst_corr, pearson(attr.per_segment, a));
  }

  const bool pass = worst_err <= kMaxAbsError && worst_corr >= kMinCorrelation;
  std::ostringstream d;
  d << kModels << " planted linear models (S=" << kSegments << ", n=" << kSamples
    << "): worst |coef error| " << std::scientific << std::setprecision(2) << worst_err
    << " (tol " << kMaxAbsError << "), worst correlation " << std::fixed
    << std::setprecision(4) << worst_corr << " (need >= " << kMinCorrelation << ")";
  verdict(3, pass, d.str());
}

// Running the explain command end to end must leave every extractor weight
// bit-for-bit identical to the checkpoint it started from, for all four
// architectures.
TEST(Acceptance, Criterion04ExplainNeverTouchesExtractorWeights) {
  TempDir tmp;
  const fs::path cfg = tmp.path() / "run.json";
  {
    std::ofstream out(cfg);
    out << kTinyConfig;
  }
  const std::string data = (tmp.path() / "data").string();
  ASSERT_EQ(silent_cli({"generate", "--config", cfg.string(), "--seed", "21", "--out", data}), 0);
  const Dataset ds = load_dataset(data, mvx::cli::detail::schema_for_root(data));

  TrainConfig heads_cfg;
  heads_cfg.batch_size = 16;
  heads_cfg.epochs = 2;
  heads_cfg.learning_rate = 1e-2;

  bool all_ok = true;
  std::ostringstream d;
  for (const std::string arch : {"csv", "ssg", "psg", "cdv"}) {
    const fs::path run = tmp.path() / ("run_" + arch);
    ASSERT_EQ(silent_cli({"train", "--config", cfg.string(), "--seed", "21", "--arch", arch,
                          "--data", data, "--out", run.string()}), 0);
    const fs::path ckpt = run / "checkpoint.bin";
    const std::string bytes_before = slurp(ckpt);

    ASSERT_EQ(silent_cli({"explain", "--config", cfg.string(), "--seed", "21",
                          "--ckpt", ckpt.string(), "--data", data, "--sample", "s0000",
                          "--view", "0", "--method", "lime",
                          "--out", (tmp.path() / ("ex_" + arch)).string()}), 0);

    const bool file_untouched = slurp(ckpt) == bytes_before;

    // Rebuild the explainer the same way the command does and compare every
    // extractor's weight hash against a fresh load of the checkpoint.
    MultiViewModel fresh = MultiViewModel::load(ckpt.string());
    std::vector<std::uint64_t> want;
    for (const auto& fe : fresh.extractors()) want.push_back(fe.weight_hash());
    const ExplainerBundle bundle = ExplainerBundle::build(
        MultiViewModel::load(ckpt.string()), ds, heads_cfg, derive_seed(21, 41));
    bool hashes_equal = bundle.model.extractors().size() == want.size();
    for (std::size_t i = 0; hashes_equal && i < want.size(); ++i)
      hashes_equal = bundle.model.extractors()[i].weight_hash() == want[i];

    const bool ok = file_untouched && hashes_equal;
    all_ok = all_ok && ok;
    d << arch << (ok ? " frozen" : " CHANGED") << " ";
  }
  verdict(4, all_ok, d.str() + "(checkpoint bytes + per-extractor weight hashes)");
}

// Each topology must be invariant under exactly the view permutations its
// pooling structure promises, across a bank of random samples.
TEST(Acceptance, Criterion05PoolingRespectsTheDeclaredViewSymmetries) {
  constexpr double kTol = 1e-6;
  constexpr int kSamples = 100;
  const MultiViewSchema schema = default_five_view_schema(16, 16);
  const ModelConfig mc = tiny_model();

  const MultiViewModel csv = build_model(ArchKind::CSV, schema, mc, 5);
  const MultiViewModel ssg = build_model(ArchKind::SSG, schema, mc, 6);
  MultiViewModel cdv = build_model(ArchKind::CDV, schema, mc, 7);
  MultiViewModel psg = build_model(ArchKind::PSG, schema, mc, 8);

  // Arbitrary full permutations for the shared-extractor model.
  std::vector<std::vector<int>> full_perms{{4, 3, 2, 1, 0}, {1, 0, 3, 4, 2}};
  {
    Rng prng(97);
    for (int k = 0; k < 8; ++k) {
      std::vector<int> p{0, 1, 2, 3, 4};
      prng.shuffle(p);
      full_perms.push_back(p);
    }
  }
  // All permutations that keep views inside their sub-groups {0,1} / {2,3,4}.
  std::vector<std::vector<int>> group_perms;
  {
    std::vector<int> g0{0, 1}, g1{2, 3, 4};
    std::sort(g1.begin(), g1.end());
    do {
      group_perms.push_back({g0[0], g0[1], g1[0], g1[1], g1[2]});
      group_perms.push_back({g0[1], g0[0], g1[0], g1[1], g1[2]});
    } while (std::next_permutation(g1.begin(), g1.end()));
  }

  // For per-view-extractor models, permuting views only preserves the output
  // when the extractors are re-assigned along with them.
  const auto co_permuted = [&](const MultiViewModel& orig, ArchKind kind, std::uint64_t seed,
                               const std::vector<int>& pi) {
    MultiViewModel clone = build_model(kind, schema, mc, seed);  // same seed = same classifiers
    for (int v = 0; v < 5; ++v)
      clone.extractors()[static_cast<std::size_t>(v)].copy_weights_from(
          orig.extractors()[static_cast<std::size_t>(pi[static_cast<std::size_t>(v)])]);
    return clone;
  };
  std::vector<MultiViewModel> cdv_clones, psg_clones;
  const std::vector<std::vector<int>> cdv_pis{{4, 3, 2, 1, 0}, {2, 0, 3, 4, 1}};
  const std::vector<std::vector<int>> psg_pis{{1, 0, 3, 4, 2}, {1, 0, 4, 2, 3}};
  for (const auto& pi : cdv_pis) cdv_clones.push_back(co_permuted(cdv, ArchKind::CDV, 7, pi));
  for (const auto& pi : psg_pis) psg_clones.push_back(co_permuted(psg, ArchKind::PSG, 8, pi));

  const auto permute = [](const std::vector<Image>& views, const std::vector<int>& pi) {
    std::vector<Image> out;
    for (int v : pi) out.push_back(views[static_cast<std::size_t>(v)]);
    return out;
  };

  Rng rng(31415);
  double worst_csv = 0.0, worst_ssg = 0.0, worst_cdv = 0.0, worst_psg = 0.0;
  for (int i = 0; i < kSamples; ++i) {
    const std::vector<Image> views = random_views(rng, 5, 16, 16);

    const Eigen::VectorXd p_csv = csv.predict_proba(views);
    for (const auto& pi : full_perms)
      worst_csv = std::max(worst_csv,
                           (csv.predict_proba(permute(views, pi)) - p_csv).cwiseAbs().maxCoeff());

    const Eigen::VectorXd p_ssg = ssg.predict_proba(views);
    for (const auto& pi : group_perms)
      worst_ssg = std::max(worst_ssg,
                           (ssg.predict_proba(permute(views, pi)) - p_ssg).cwiseAbs().maxCoeff());

    const Eigen::VectorXd p_cdv = cdv.predict_proba(views);
    for (std::size_t k = 0; k < cdv_pis.size(); ++k)
      worst_cdv = std::max(
          worst_cdv, (cdv_clones[k].predict_proba(permute(views, cdv_pis[k])) - p_cdv)
                         .cwiseAbs()
                         .maxCoeff());

    const Eigen::VectorXd p_psg = psg.predict_proba(views);
    for (std::size_t k = 0; k < psg_pis.size(); ++k)
      worst_psg = std::max(
          worst_psg, (psg_clones[k].predict_proba(permute(views, psg_pis[k])) - p_psg)
                         .cwiseAbs()
                         .maxCoeff());
  }

  const double worst = std::max({worst_csv, worst_ssg, worst_cdv, worst_psg});
  const bool pass = worst <= kTol;
  std::ostringstream d;
  d << kSamples << " random samples: max deviation " << std::scientific << std::setprecision(2)
    << "shared " << worst_csv << ", per-subgroup " << worst_ssg << ", per-view pooled "
    << worst_cdv << ", per-view cascaded " << worst_psg << " (tol " << kTol << ")";
  verdict(5, pass, d.str());
}

// Copying the shared extractor's weights into every per-view extractor must
// make the pooled per-view model agree with the shared model everywhere.
TEST(Acceptance, Criterion06WeightCopyMakesPerViewModelMatchSharedModel) {
  constexpr double kTol = 1e-6;
  constexpr int kSamples = 50;
  const MultiViewSchema schema = default_five_view_schema(16, 16);
  const ModelConfig mc = tiny_model();

  const MultiViewModel csv = build_model(ArchKind::CSV, schema, mc, 40);
  MultiViewModel cdv = build_model(ArchKind::CDV, schema, mc, 41);
  for (auto& fe : cdv.extractors()) fe.copy_weights_from(csv.extractors().front());
  cdv.final_classifier() = csv.final_classifier();

  Rng rng(2718);
  double worst = 0.0;
  for (int i = 0; i < kSamples; ++i) {
    const std::vector<Image> views = random_views(rng, 5, 16, 16);
    worst = std::max(worst,
                     (cdv.predict_proba(views) - csv.predict_proba(views)).cwiseAbs().maxCoeff());
  }

  const bool pass = worst <= kTol;
  std::ostringstream d;
  d << kSamples << " random samples: max probability deviation " << std::scientific
    << std::setprecision(2) << worst << " (tol " << kTol << ")";
  verdict(6, pass, d.str());
}

// Analytic backbone gradients must agree with central finite differences at
// random smooth probe points.
TEST(Acceptance, Criterion07BackboneGradientsMatchFiniteDifferences) {
  constexpr double kRelTol = 1e-4;
  constexpr int kProbes = 20;

  BackboneConfig bc;
  bc.conv_channels = {4, 8};
  bc.feature_dim = 16;
  bc.activation = Activation::softplus;  // smooth everywhere, so FD is well posed
  const FeatureExtractor fe("probe", 16, 16, 1, bc, 12);

  Rng rng(5151);
  bool all = true;
  double worst = 0.0;
  for (int t = 0; t < kProbes; ++t) {
    const Image img = mvx::testing::random_image(16, 16, rng);
    Eigen::VectorXd coeffs(fe.feature_dim());
    for (int i = 0; i < coeffs.size(); ++i) coeffs(i) = rng.uniform(-1.0, 1.0);
    GradCheckOptions opts;
    opts.seed = static_cast<std::uint64_t>(t);
    opts.fd_step = 1e-5;  // small enough not to flip any pool-window argmax
    const GradCheckResult res = gradient_check(fe, img, kRelTol, coeffs, opts);
    all = all && res.passed;
    worst = std::max(worst, res.worst_rel_err);
  }

  std::ostringstream d;
  d << kProbes << " random probe points: worst relative error " << std::scientific
    << std::setprecision(2) << worst << " (tol " << kRelTol << ")";
  verdict(7, all && worst <= kRelTol, d.str());
}

// The ranking AUC must equal the brute-force pairwise win probability,
// including tie handling, and reproduce a hand-computed value.
TEST(Acceptance, Criterion08AucMatchesPairwiseProbability) {
  constexpr double kTol = 1e-12;
  constexpr int kTrials = 1000;

  Rng rng(2468);
  double worst = 0.0;
  for (int t = 0; t < kTrials; ++t) {
    const int n = 2 + static_cast<int>(rng.below(39));
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      scores[static_cast<std::size_t>(i)] = static_cast<double>(rng.below(11)) / 10.0;  // ties
      labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(2));
    }
    labels.front() = 0;  // guarantee both classes
    labels.back() = 1;

    double wins = 0.0;
    int pairs = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (labels[static_cast<std::size_t>(i)] != 1 || labels[static_cast<std::size_t>(j)] != 0)
          continue;
        ++pairs;
        if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(j)])
          wins += 1.0;
        else if (scores[static_cast<std::size_t>(i)] == scores[static_cast<std::size_t>(j)])
          wins += 0.5;
      }
    worst = std::max(worst, std::abs(auc(scores, labels) - wins / pairs));
  }

  const double worked = auc({0.9, 0.8, 0.8, 0.3}, {1, 1, 0, 0});
  const bool pass = worst <= kTol && std::abs(worked - 0.875) <= 1e-15;
  std::ostringstream d;
  d << kTrials << " random score sets: worst gap to pairwise oracle " << std::scientific
    << std::setprecision(2) << worst << " (tol " << kTol << "); worked example "
    << std::fixed << std::setprecision(3) << worked << " (expect 0.875)";
  verdict(8, pass, d.str());
}

// On easy planted defects, the explanation of the defective view must point
// at the defect far more often than random pixels would.
TEST(Acceptance, Criterion09ExplanationsLocalizePlantedDefects) {
  constexpr double kMinAdvantage = 3.0;  // hit rate vs random-pixel baseline
  constexpr int kDefectives = 50;

  SyntheticSpec spec;
  spec.schema = default_five_view_schema(32, 32);
  spec.n_samples = 160;
  spec.defect_intensity = 0.9;  // "easy" regime: strong, clearly visible defects
  spec.texture_noise_sigma = 0.03;
  spec.style_gap = 0.5;
  spec.class_balance = 0.5;
  spec.seed = 2025;
  const GeneratedData data = generate(spec);
  const auto [train_set, test_set] = split_dataset(data.dataset, 0.7, derive_seed(2025, 31));

  ModelConfig mc;
  mc.backbone.conv_channels = {4, 8, 16};
  mc.backbone.feature_dim = 8;
  TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 60;
  tc.learning_rate = 1e-3;
  MultiViewModel model = build_model(ArchKind::SSG, spec.schema, mc, 5);
  const TrainReport r = train_model(model, train_set, &test_set, tc, 5);

  TrainConfig heads_cfg;
  heads_cfg.batch_size = 16;
  heads_cfg.epochs = 40;
  heads_cfg.learning_rate = 1e-2;
  const ExplainerBundle bundle =
      ExplainerBundle::build(std::move(model), train_set, heads_cfg, derive_seed(5, 41));

  ExplainOptions eo;
  eo.method = ExplainMethod::lime;
  eo.num_segments = 40;
  eo.lime_samples = 600;

  int idx = 0, hits = 0;
  double baseline_sum = 0.0;
  for (const auto& [sid, view_masks] : data.masks) {
    if (idx >= kDefectives) break;
    const Sample& s = data.dataset.by_id(sid);
    for (const auto& [v, mask] : view_masks) {
      const AttributionMap attr =
          explain_view(bundle, s, v, eo, derive_seed(500, static_cast<std::uint64_t>(idx)));
      if (pointing_game(attr, mask)) ++hits;
      baseline_sum +=
          random_pixel_hit_rate(mask, 2000, derive_seed(501, static_cast<std::uint64_t>(idx)));
    }
    ++idx;
  }
  ASSERT_EQ(idx, kDefectives);

  const double hit_rate = static_cast<double>(hits) / kDefectives;
  const double baseline = baseline_sum / kDefectives;
  const double ratio = baseline > 0.0 ? hit_rate / baseline : 0.0;
  const bool pass = ratio >= kMinAdvantage;
  std::ostringstream d;
  d << std::fixed << std::setprecision(3) << kDefectives << " defectives: pointing-game hit rate "
    << hit_rate << " vs random-pixel baseline " << baseline << " -> " << std::setprecision(1)
    << ratio << "x (need >= " << kMinAdvantage << "x); classifier test acc "
    << std::setprecision(2) << r.final_test_acc;
  verdict(9, pass, d.str());
}

// Re-running any command with the same config and seed must reproduce every
// numeric artifact byte for byte. The training report's wall_time_s field is
// the one legitimately nondeterministic value and is masked before comparing.
TEST(Acceptance, Criterion10IdenticalSeedsReproduceEveryArtifact) {
  TempDir tmp;
  const fs::path cfg = tmp.path() / "run.json";
  {
    std::ofstream out(cfg);
    out << kTinyConfig;
  }
  bool pass = true;
  std::ostringstream d;

  // generate
  const fs::path g1 = tmp.path() / "g1", g2 = tmp.path() / "g2";
  silent_cli({"generate", "--config", cfg.string(), "--seed", "12", "--out", g1.string()});
  silent_cli({"generate", "--config", cfg.string(), "--seed", "12", "--out", g2.string()});
  auto dg1 = tree_digest(g1), dg2 = tree_digest(g2);
  json c1 = json::parse(slurp(g1 / "config.resolved.json"));
  json c2 = json::parse(slurp(g2 / "config.resolved.json"));
  c1.erase("output_dir");
  c2.erase("output_dir");
  dg1.erase("config.resolved.json");
  dg2.erase("config.resolved.json");
  const bool gen_ok = dg1 == dg2 && c1 == c2;
  pass = pass && gen_ok;
  d << "generate " << (gen_ok ? "ok" : "DIFFERS") << "; ";

  // train
  const fs::path t1 = tmp.path() / "t1", t2 = tmp.path() / "t2";
  silent_cli({"train", "--config", cfg.string(), "--seed", "12", "--arch", "ssg",
              "--data", g1.string(), "--out", t1.string()});
  silent_cli({"train", "--config", cfg.string(), "--seed", "12", "--arch", "ssg",
              "--data", g1.string(), "--out", t2.string()});
  bool train_ok = true;
  for (const char* name : {"checkpoint.bin", "curves.csv", "curves.png", "split.json"})
    train_ok = train_ok && slurp(t1 / name) == slurp(t2 / name);
  json r1 = json::parse(slurp(t1 / "report.json"));
  json r2 = json::parse(slurp(t2 / "report.json"));
  const bool timed = r1.contains("wall_time_s") && r2.contains("wall_time_s");
  r1.erase("wall_time_s");
  r2.erase("wall_time_s");
  train_ok = train_ok && timed && r1 == r2;
  pass = pass && train_ok;
  d << "train " << (train_ok ? "ok (wall_time_s masked)" : "DIFFERS") << "; ";

  // explain
  const fs::path e1 = tmp.path() / "e1", e2 = tmp.path() / "e2";
  for (const fs::path& out : {e1, e2})
    silent_cli({"explain", "--config", cfg.string(), "--seed", "12",
                "--ckpt", (t1 / "checkpoint.bin").string(), "--data", g1.string(),
                "--sample", "s0001", "--view", "all", "--method", "lime",
                "--out", out.string()});
  bool explain_ok = slurp(e1 / "heads.bin") == slurp(e2 / "heads.bin");
  for (int v = 0; v < 5; ++v) {
    const std::string stem = "s0001_view" + std::to_string(v) + "_lime";
    explain_ok = explain_ok && slurp(e1 / (stem + ".csv")) == slurp(e2 / (stem + ".csv"));
    explain_ok = explain_ok &&
                 slurp(e1 / (stem + "_overlay.png")) == slurp(e2 / (stem + "_overlay.png"));
  }
  pass = pass && explain_ok;
  d << "explain " << (explain_ok ? "ok" : "DIFFERS") << "; ";

  // eval
  const fs::path v1 = tmp.path() / "v1", v2 = tmp.path() / "v2";
  for (const fs::path& out : {v1, v2})
    silent_cli({"eval", "--config", cfg.string(), "--seed", "12",
                "--ckpt", (t1 / "checkpoint.bin").string(), "--data", g1.string(),
                "--split", (t1 / "split.json").string(), "--out", out.string()});
  const bool eval_ok = slurp(v1 / "eval_report.json") == slurp(v2 / "eval_report.json");
  pass = pass && eval_ok;
  d << "eval " << (eval_ok ? "ok" : "DIFFERS");

  verdict(10, pass, d.str());
}

// Every architecture must be able to drive training accuracy to 100% on a
// small, clearly separable set within a fixed epoch budget.
TEST(Acceptance, Criterion11EveryArchitectureOverfitsASeparableSmokeSet) {
  constexpr int kMaxEpochs = 50;

  SyntheticSpec spec;
  spec.schema = default_five_view_schema(32, 32);
  spec.n_samples = 8;
  spec.defect_intensity = 0.9;
  spec.texture_noise_sigma = 0.01;
  spec.style_gap = 1.0;
  spec.class_balance = 0.5;
  spec.seed = 321;
  const GeneratedData data = generate(spec);

  TrainConfig tc;
  tc.batch_size = 2;
  tc.epochs = kMaxEpochs;
  tc.learning_rate = 5e-3;  // smoke-test rate; the goal is memorization, not generalization

  bool all = true;
  std::ostringstream d;
  for (const ArchKind kind : {ArchKind::CSV, ArchKind::SSG, ArchKind::PSG, ArchKind::CDV}) {
    MultiViewModel model = build_model(kind, spec.schema, tiny_model(), 2);
    const TrainReport r = train_model(model, data.dataset, nullptr, tc, 2);
    int first_perfect = -1;
    for (std::size_t e = 0; e < r.train_acc.size(); ++e)
      if (r.train_acc[e] >= 1.0) {
        first_perfect = static_cast<int>(e) + 1;
        break;
      }
    all = all && first_perfect > 0;
    d << to_string(kind)
      << (first_perfect > 0 ? "@" + std::to_string(first_perfect) : "@never") << " ";
  }
  std::ostringstream full;
  full << "epoch reaching 100% train accuracy (budget " << kMaxEpochs << "): " << d.str();
  verdict(11, all, full.str());
}
