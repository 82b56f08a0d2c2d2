// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gdpl/harness.hpp"
#include "gdpl/ops.hpp"
#include "gdpl/selfcheck.hpp"

using namespace gdpl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(int id, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

void info(const std::string& line) {
  std::printf("  info: %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

/// (a1 + b1 i + c1 j + d1 k)(a2 + b2 i + c2 j + d2 k), expanded by hand.
std::array<double, 4> expanded_product(const Quaternion& p, const Quaternion& q) {
  return {p.r * q.r - p.x * q.x - p.y * q.y - p.z * q.z, p.r * q.x + p.x * q.r + p.y * q.z - p.z * q.y,
          p.r * q.y - p.x * q.z + p.y * q.r + p.z * q.x, p.r * q.z + p.x * q.y - p.y * q.x + p.z * q.r};
}

double tail_singular_value(const Tensor& op, std::size_t rank) {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(op.values().data(),
                                                                                           op.dim(0), op.dim(1));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  double worst = 0.0;
  for (Eigen::Index i = static_cast<Eigen::Index>(rank); i < svd.singularValues().size(); ++i) {
    worst = std::max(worst, svd.singularValues()(i));
  }
  return worst;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

EpisodeConfig variant(std::uint64_t seed, int which) {
  EpisodeConfig c;
  c.seed = seed;
  c.gdpl.use_quat = which != 1;
  c.gdpl.use_lora = which != 2;
  return c;
}

}  // namespace

int main() {
  Rng rng(2024);

  // 1. Hamilton product against the matrix form and a hand expansion.
  {
    const auto t0 = Clock::now();
    double err = 0.0;
    for (int i = 0; i < 1000; ++i) {
      Quaternion p{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
      Quaternion q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
      const auto got = hamilton_product(p, q).as_array();
      err = std::max(err, max_abs_diff(got, matvec4(quaternion_to_matrix(p), q.as_array())));
      err = std::max(err, max_abs_diff(got, expanded_product(p, q)));
    }
    const double s = seconds_since(t0);
    verdict(1, err < 1e-12 && s < 1.0, fmt("max abs error %.2e over 1000 pairs, %.3f s", err, s));
  }

  // 2. Matrix homomorphism and multiplicative norm.
  {
    double hom = 0.0, norm = 0.0;
    for (int i = 0; i < 1000; ++i) {
      Quaternion p{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
      Quaternion q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
      const Matrix4 lhs = matmul4(quaternion_to_matrix(p), quaternion_to_matrix(q));
      const Matrix4 rhs = quaternion_to_matrix(hamilton_product(p, q));
      for (int r = 0; r < 4; ++r) hom = std::max(hom, max_abs_diff(lhs[r], rhs[r]));
      const double np = std::sqrt(p.r * p.r + p.x * p.x + p.y * p.y + p.z * p.z);
      const double nq = std::sqrt(q.r * q.r + q.x * q.x + q.y * q.y + q.z * q.z);
      norm = std::max(norm, std::abs(hamilton_product(p, q).norm() - np * nq));
    }
    verdict(2, hom < 1e-10 && norm < 1e-10, fmt("homomorphism %.2e, norm %.2e", hom, norm));
  }

  // 3. Finite differences for every trainable tensor of the micro model.
  {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string name;
    auto checks = gradient_checks(7, 2);
    for (const auto& c : checks) {
      if (c.value >= worst) worst = c.value, name = c.name;
    }
    const double s = seconds_since(t0);
    double deeper = 0.0;
    for (const auto& c : gradient_checks(7, 3)) deeper = std::max(deeper, c.value);
    verdict(3, worst < 1e-4 && deeper < 1e-4 && s < 30.0,
            fmt("%zu tensors x 3 variants, worst %.2e (%s), %.2f s; three-layer encoder worst %.2e", checks.size(),
                worst, name.c_str(), s, deeper));
  }

  // 4. Harmonic means of published accuracy pairs.
  {
    const double a = harmonic_mean(89.00, 60.37), b = harmonic_mean(97.90, 75.23), c = harmonic_mean(50.60, 51.20);
    const bool pass = std::abs(a - 71.94) <= 0.01 && std::abs(b - 85.08) <= 0.01 && std::abs(c - 50.89) <= 0.02;
    verdict(4, pass, fmt("%.4f, %.4f, %.4f", a, b, c));
  }

  // Everything below runs on the pretrained desk-scale backbone.
  const auto t_pre = Clock::now();
  const Backbone backbone = pretrain_backbone(PretrainConfig{});
  const double pretrain_s = seconds_since(t_pre);
  info(fmt("pretraining the frozen encoders took %.1f s", pretrain_s));

  // 5. LoRA neutrality at initialization and the identity cross-modal update.
  {
    EpisodeConfig cfg;
    const EpisodeData data = make_episode_data(backbone, cfg);
    std::vector<std::size_t> rows(data.split.base_test.begin(), data.split.base_test.begin() + 24);
    const ImageBatch batch = select(data.images, rows);
    GdplConfig off = cfg.gdpl;
    off.use_lora = false;
    Rng r1(11), r2(11);
    const auto with = GdplModel::init(backbone, cfg.gdpl, r1);
    const auto without = GdplModel::init(backbone, off, r2);
    double diff = 0.0;
    {
      NoGradGuard guard;
      diff = max_abs_diff(with.forward(batch, data.split.base_classes).probabilities.values(),
                          without.forward(batch, data.split.base_classes).probabilities.values());
      const Backbone micro = micro_backbone(5, 2);
      std::vector<Image> imgs{Image{8, 8, rng.normal_vector(64, 1.0)}, Image{8, 8, rng.normal_vector(64, 1.0)}};
      const ImageBatch mb = prepare_images(micro, imgs);
      GdplConfig g;
      g.depth = 1;
      g.lora_rank = 2;
      GdplConfig g_off = g;
      g_off.use_lora = false;
      Rng r3(12), r4(12);
      const std::vector<std::size_t> classes{0, 1, 2};
      diff = std::max(diff, max_abs_diff(GdplModel::init(micro, g, r3).forward(mb, classes).probabilities.values(),
                                         GdplModel::init(micro, g_off, r4).forward(mb, classes).probabilities.values()));
    }
    bool exact = true;
    for (int i = 0; i < 100; ++i) {
      Tensor ll = Tensor::from_data({4}, rng.normal_vector(4, 1.0));
      Tensor lv = Tensor::from_data({4}, rng.normal_vector(4, 1.0));
      auto [hl, hv] = cross_modal_update(ll, lv, Tensor::from_data({2, 2}, {1, 0, 0, 1}));
      exact = exact && std::equal(hl.values().begin(), hl.values().end(), ll.values().begin()) &&
              std::equal(hv.values().begin(), hv.values().end(), lv.values().begin());
    }
    verdict(5, diff < 1e-12 && exact,
            fmt("max |p_lora - p_plain| = %.2e; identity M_c bit-exact on 100 draws: %s", diff, exact ? "yes" : "no"));
  }

  // Seed 0 with defaults; timed for criterion 7.
  const auto t_ep = Clock::now();
  std::vector<EpisodeData> data;
  std::vector<std::vector<EpisodeResult>> runs(3);
  data.push_back(make_episode_data(backbone, variant(0, 0)));
  runs[0].push_back(train_episode(backbone, variant(0, 0), data[0]));
  const double seed0_s = seconds_since(t_ep);
  // 6. Rank of every shift operator of the trained seed-0 model, plus random factors.
  {
    const auto& model = runs[0][0].model;
    auto [lam_l, lam_v] = model.updated_lambdas();
    double worst = 0.0;
    std::size_t count = 0;
    const std::size_t v = model.lora().rank();
    for (std::size_t i = 0; i < lam_l.size(); ++i) {
      worst = std::max(worst, tail_singular_value(shift_operator(model.lora().language[i].beta, lam_l[i],
                                                                 model.lora().language[i].alpha), v));
      worst = std::max(worst, tail_singular_value(shift_operator(model.lora().vision[i].beta, lam_v[i],
                                                                 model.lora().vision[i].alpha), v));
      count += 2;
    }
    for (std::size_t r = 1; r <= 8; ++r, ++count) {
      Tensor beta = Tensor::from_data({64, r}, rng.normal_vector(64 * r, 1.0));
      Tensor lam = Tensor::from_data({r}, rng.normal_vector(r, 1.0));
      Tensor alpha = Tensor::from_data({r, 64}, rng.normal_vector(r * 64, 1.0));
      worst = std::max(worst, tail_singular_value(shift_operator(beta, lam, alpha), r));
    }
    verdict(6, worst < 1e-10, fmt("%zu operators, largest singular value beyond V: %.2e", count, worst));
  }

  // 7. Seed 0 against the frozen zero-shot baseline.
  {
    const auto& r = runs[0][0].report;
    const double total = pretrain_s + seed0_s;
    const double gain_base = r.acc_base - r.zero_shot_base, gain_hm = r.hm - r.zero_shot_hm;
    verdict(7, gain_base >= 10.0 && gain_hm >= 5.0 && total < 300.0,
            fmt("base %.2f vs zero-shot %.2f (+%.2f), HM %.2f vs %.2f (+%.2f), novel %.2f vs %.2f, %.1f s total",
                r.acc_base, r.zero_shot_base, gain_base, r.hm, r.zero_shot_hm, gain_hm, r.acc_novel,
                r.zero_shot_novel, total));
    info(fmt("seed 0 training loss epoch 1 %.4f, final %.4f", r.epochs[1].loss, r.epochs.back().loss));
  }

  // 8 and 9. Five seeds, three configurations sharing each seed's data.
  const char* names[3] = {"full", "no-quat", "no-lora"};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    if (seed > 0) data.push_back(make_episode_data(backbone, variant(seed, 0)));
    for (int which = 0; which < 3; ++which) {
      if (seed == 0 && which == 0) continue;
      runs[which].push_back(train_episode(backbone, variant(seed, which), data[seed]));
    }
    info(fmt("seed %llu HM full %.2f, no-quat %.2f, no-lora %.2f", static_cast<unsigned long long>(seed),
             runs[0][seed].report.hm, runs[1][seed].report.hm, runs[2][seed].report.hm));
  }
  {
    double mean[3] = {0, 0, 0};
    for (int w = 0; w < 3; ++w) {
      std::vector<EpisodeReport> reports;
      for (const auto& r : runs[w]) reports.push_back(r.report);
      const auto s = summarize(reports);
      mean[w] = s.mean_of_hm;
      info(fmt("%s: mean acc_base %.2f, mean acc_novel %.2f, mean of HM %.2f, HM of means %.2f", names[w],
               s.mean_acc_base, s.mean_acc_novel, s.mean_of_hm, s.hm_of_means));
    }
    verdict(8, mean[0] >= mean[1] && mean[0] >= mean[2],
            fmt("mean HM full %.2f, no-quat %.2f, no-lora %.2f", mean[0], mean[1], mean[2]));
  }
  {
    int decreased = 0;
    std::string trace;
    for (const auto& r : runs[0]) {
      const double first = r.report.epochs[1].mean_cos, last = r.report.epochs.back().mean_cos;
      decreased += last < first;
      trace += fmt("%.4f->%.4f ", first, last);
    }
    verdict(9, decreased >= 4, fmt("final below epoch 1 in %d/5 seeds: %s", decreased, trace.c_str()));
  }

  // Derived checks outside the numbered criteria.
  {
    double gdpl_sum = 0.0, zs_sum = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::vector<SyntheticDataset> targets;
      for (std::size_t d : {2u, 3u}) {
        DatasetConfig dc;
        dc.seed = derive_seed(seed, 50 + d);
        dc.n_classes = 12;
        dc.per_class = 56;
        dc.domain_id = d;
        targets.push_back(generate_dataset(dc));
      }
      auto res = cross_dataset_eval(runs[0][seed].model, targets, variant(seed, 0));
      for (std::size_t i = 0; i < targets.size(); ++i, ++n) gdpl_sum += res.gdpl[i], zs_sum += res.zero_shot[i];
    }
    info(fmt("cross-domain base accuracy over 5 seeds x 2 domains: GDPL %.2f, frozen zero-shot %.2f", gdpl_sum / n,
             zs_sum / n));

    DatasetConfig dc;
    dc.seed = 3;
    dc.style = Style::Natural;
    auto natural = generate_dataset(dc);
    dc.style = Style::DomainShifted;
    auto shifted = generate_dataset(dc);
    std::vector<std::size_t> all(natural.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    info(fmt("frozen zero-shot on 12 classes: natural %.2f, domain-shifted %.2f",
             evaluate_zero_shot(backbone, natural, all, natural.classes, 24),
             evaluate_zero_shot(backbone, shifted, all, shifted.classes, 24)));
  }

  // 10. Byte-identical metrics.csv for a repeated configuration.
  {
    const fs::path a = fs::temp_directory_path() / "gdpl_acceptance_a", b = fs::temp_directory_path() / "gdpl_acceptance_b";
    fs::remove_all(a);
    fs::remove_all(b);
    write_run(a, runs[0][0]);
    write_run(b, train_episode(backbone, variant(0, 0)));
    const std::string ca = slurp(a / "metrics.csv"), cb = slurp(b / "metrics.csv");
    verdict(10, !ca.empty() && ca == cb, fmt("%zu bytes each, identical: %s", ca.size(), ca == cb ? "yes" : "no"));
  }

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
