// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include "medstate/cli.hpp"
#include "medstate/experiment.hpp"
#include "gradcheck.hpp"

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace medstate;
using cli::ReproduceResult;
using cli::reproduce;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
  return m;
}

FeatureMatrix wrap(Matrix m) {
  FeatureMatrix f;
  f.kind = FeatureKind::kMfcc26;
  f.values = std::move(m);
  return f;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double max_increase_violation(const std::vector<double>& trace) {
  double worst = 0;
  for (std::size_t i = 1; i < trace.size(); ++i) worst = std::max(worst, trace[i - 1] - trace[i]);
  return worst;
}

// ---------------------------------------------------------------------------

// Random architectures from the full search space, input widths from the
// feature-set/context grid. Large networks are checked on a seeded sample of
// parameters drawn from every layer.
Outcome gradient_check() {
  const auto archs = candidate_architectures();
  std::mt19937_64 rng(2024);
  const int bases[] = {13, 26, 23}, contexts[] = {1, 5, 11, 15};
  std::vector<DnnArchitecture> picked;
  DnnArchitecture reference;
  reference.input_dim = 120;
  reference.hidden = {512, 128};
  picked.push_back(reference);
  while (picked.size() < 8) {
    DnnArchitecture a;
    a.hidden = archs[std::uniform_int_distribution<std::size_t>(0, archs.size() - 1)(rng)];
    a.input_dim = bases[rng() % 3] * contexts[rng() % 4];
    picked.push_back(a);
  }
  double worst = 0;
  std::size_t checked = 0;
  std::uint64_t seed = 1;
  for (const auto& a : picked) {
    const Matrix x = gaussian(8, a.input_dim, seed + 100);
    Eigen::VectorXd y(8), w(8);
    for (int i = 0; i < 8; ++i) {
      y(i) = i % 2;
      w(i) = 0.5 + 0.2 * i;
    }
    const DnnModel m = medstate::testing::gradcheck_network(a, seed);
    const std::array<const Eigen::VectorXd*, 2> variants{nullptr, &w};
    for (const auto* weights : variants) {
      const auto g = medstate::testing::check_gradient(m, x, y, 1e-5, weights, 240, seed);
      worst = std::max(worst, g.max_relative_error);
      checked += g.checked;
    }
    ++seed;
  }
  return {worst < 1e-4, std::to_string(picked.size()) + " architectures, " + std::to_string(checked) +
                            " parameters, max relative error " + fmt("%.3g", worst)};
}

Outcome em_monotone() {
  double worst_bi = 0, worst_ubm = 0;
  for (std::uint64_t s = 1; s <= 20; ++s) {
    std::mt19937_64 rng(s);
    std::normal_distribution<double> lo(-9.0, 1.0), hi(-3.0, 1.5);
    std::bernoulli_distribution speech(0.4);
    std::vector<double> energies(3000);
    for (auto& e : energies) e = speech(rng) ? hi(rng) : lo(rng);
    worst_bi = std::max(worst_bi, max_increase_violation(fit_bigaussian_traced(energies, s).loglik_trace));

    Matrix x = gaussian(4000, 6, 1000 + s);
    for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i).array() += static_cast<double>(i % 4) - 1.5;
    worst_ubm = std::max(worst_ubm, max_increase_violation(train_ubm_traced(wrap(x), 8, s).final_trace));
  }
  return {worst_bi <= 1e-9 && worst_ubm <= 1e-9,
          "20 seeds, largest decrease bi-Gaussian " + fmt("%.3g", worst_bi) + ", UBM " + fmt("%.3g", worst_ubm)};
}

Outcome pca_properties() {
  double worst_gram = 0, min_kept = 1;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    const Matrix x = gaussian(600, 20, s) * gaussian(20, 20, s + 50);
    const PcaModel p = fit_pca(x, 0.95);
    const Matrix gram = p.components * p.components.transpose();
    worst_gram = std::max(worst_gram, (gram - Matrix::Identity(p.kept(), p.kept())).cwiseAbs().maxCoeff());
    min_kept = std::min(min_kept, p.kept_fraction);
  }
  Matrix d = Matrix::Zero(6, 3);
  const double sd[] = {2.0, 1.0, 0.1};
  for (int a = 0; a < 3; ++a) {
    d(2 * a, a) = sd[a] * std::sqrt(3.0);
    d(2 * a + 1, a) = -sd[a] * std::sqrt(3.0);
  }
  const auto kept = fit_pca(d, 0.95).kept();
  return {worst_gram < 1e-8 && min_kept >= 0.95 && kept == 2,
          "orthonormality error " + fmt("%.3g", worst_gram) + ", kept variance " + fmt("%.4f", min_kept) +
              ", diag(4,1,0.01) keeps " + std::to_string(kept)};
}

Outcome map_limits() {
  GmmModel ubm;
  ubm.weights = Vector::Ones(1);
  ubm.means = gaussian(1, 5, 3);
  ubm.variances = Matrix::Constant(1, 5, 0.7);
  const Matrix x = gaussian(80, 5, 4);
  const RowVector ml = x.colwise().mean();
  const double to_prior = (map_adapt(ubm, wrap(x), MapConfig{1e12}).means - ubm.means).cwiseAbs().maxCoeff();
  const double to_ml = (map_adapt(ubm, wrap(x), MapConfig{1e-12}).means - ml).cwiseAbs().maxCoeff();
  const double mid =
      (map_adapt(ubm, wrap(x), MapConfig{80.0}).means - 0.5 * (ml + ubm.means)).cwiseAbs().maxCoeff();
  return {to_prior < 1e-6 && to_ml < 1e-6 && mid < 1e-9,
          "r->inf " + fmt("%.3g", to_prior) + ", r->0 " + fmt("%.3g", to_ml) + ", midpoint " + fmt("%.3g", mid)};
}

Outcome delta_exactness() {
  const Eigen::Index n = 50;
  Matrix m(n, 13);
  for (Eigen::Index t = 0; t < n; ++t)
    for (Eigen::Index j = 0; j < 13; ++j) m(t, j) = (0.3 * static_cast<double>(j) - 1.0) * static_cast<double>(t) + j;
  const FeatureMatrix d = delta(wrap(m));
  const FeatureMatrix flat = delta(wrap(Matrix::Constant(n, 13, -3.25)));
  const double constant = flat.values.rightCols(13).cwiseAbs().maxCoeff();
  double worst = 0;
  for (Eigen::Index t = 2; t < n - 2; ++t)
    for (Eigen::Index j = 0; j < 13; ++j) worst = std::max(worst, std::abs(d.values(t, 13 + j) - (0.3 * static_cast<double>(j) - 1.0)));
  return {worst <= 1e-12 && constant <= 1e-12,
          "max interior error on linear ramps " + fmt("%.3g", worst) + ", on constants " + fmt("%.3g", constant)};
}

Outcome partition_sizes() {
  CorpusManifest m;
  for (const auto& id : patient_ids(74))
    for (TaskKind t : kAllTasks)
      for (MedState s : {MedState::kOn, MedState::kOff})
        m.entries.push_back({fs::path(recording_stem(id, t, s) + ".wav"), id, t, s, std::nullopt});
  const Partition p = partition(m, SplitPlan{});
  const auto a = p.train.entries.size(), b = p.dev.entries.size(), c = p.test.entries.size();
  return {a == 740 && b == 148 && c == 444,
          std::to_string(a) + "/" + std::to_string(b) + "/" + std::to_string(c)};
}

ReproduceResult run_reproduce(double delta, const fs::path& out) {
  RunConfig cfg;
  cfg.corpus.speakers = 20;
  cfg.corpus.effect.delta = delta;
  cfg.jobs = default_jobs();
  cfg.out_dir = out;
  const cli::Logger log{&std::cerr, false};
  return reproduce(cfg, log);
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MEDSTATE_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome jobs_invariance(const fs::path& root) {
  const std::string common =
      "reproduce --quiet --speakers 3 --control-speakers 2 --components 8 --context 5 --hidden 32-8 --epochs 6 "
      "--patience 6 --out ";
  const std::vector<int> jobs{1, 2, 3};
  std::vector<std::string> reports;
  for (int j : jobs) {
    const fs::path dir = root / ("jobs" + std::to_string(j));
    const int rc = run_cli(common + dir.string() + " --jobs " + std::to_string(j), root / "jobs.log");
    if (rc != 0) return {false, "reproduce --jobs " + std::to_string(j) + " exited with " + std::to_string(rc)};
    std::string all;
    for (const char* f : {"test_report.txt", "test_report.json", "dev_report.txt", "dev_report.json", "preprocessing.json"})
      all += slurp(dir / "report" / f);
    reports.push_back(all);
  }
  const bool same = reports[1] == reports[0] && reports[2] == reports[0];
  return {same, same ? "reports identical for --jobs 1, 2, 3" : "reports differ between job counts"};
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "medstate_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  std::vector<std::pair<std::string, Outcome>> results;
  auto check = [&](const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    results.emplace_back(name, o);
  };

  check("gradient check", gradient_check);
  check("EM log-likelihood is non-decreasing", em_monotone);
  check("PCA orthonormality and retained variance", pca_properties);
  check("MAP adaptation limits", map_limits);
  check("delta exactness", delta_exactness);

  std::optional<ReproduceResult> on_off;
  std::string repro_error;
  try {
    on_off = run_reproduce(1.0, root / "delta1");
  } catch (const std::exception& e) {
    repro_error = e.what();
  }
  auto need = [&](const std::optional<ReproduceResult>& r) {
    if (!r) throw std::runtime_error("reproduce failed: " + repro_error);
    return *r;
  };
  check("segmentation agreement at 20 dB", [&] {
    const auto r = need(on_off);
    return Outcome{r.patients.sns_agreement >= 0.95, "agreement " + fmt("%.2f%%", 100 * r.patients.sns_agreement) +
                                                         " over " + std::to_string(r.patients.truth_frames) + " frames"};
  });
  check("therapist filtering on control set", [&] {
    const auto r = need(on_off);
    const auto& c = r.control.rates;
    return Outcome{c.insertion_rate <= 0.02 && c.deletion_rate <= 0.15,
                   "insertion " + fmt("%.2f%%", 100 * c.insertion_rate) + ", deletion " + fmt("%.2f%%", 100 * c.deletion_rate)};
  });
  check("reproduce accuracy with effect", [&] {
    const auto r = need(on_off);
    const auto tasks = r.report.per_task();
    const double all = r.report.overall().accuracy();
    const double story = tasks.count(TaskKind::kStorytelling) ? tasks.at(TaskKind::kStorytelling).accuracy() : 0.0;
    const double vowel = tasks.count(TaskKind::kSustainedA) ? tasks.at(TaskKind::kSustainedA).accuracy() : 0.0;
    return Outcome{all >= 0.85 && story >= vowel, "overall " + fmt("%.2f%%", 100 * all) + " (" +
                                                      std::to_string(r.report.overall().total) + " utterances), story " +
                                                      fmt("%.2f%%", 100 * story) + ", /a/ " + fmt("%.2f%%", 100 * vowel)};
  });

  check("no effect gives chance accuracy", [&] {
    const auto r = run_reproduce(0.0, root / "delta0");
    const auto t = r.report.overall();
    const double n = static_cast<double>(t.total);
    const double half_width = 2.5758293035489 * std::sqrt(0.25 / n);
    const double acc = t.accuracy();
    return Outcome{t.total > 0 && std::abs(acc - 0.5) <= half_width,
                   "accuracy " + fmt("%.2f%%", 100 * acc) + " over " + std::to_string(t.total) + " utterances, band [" +
                       fmt("%.1f", 100 * (0.5 - half_width)) + "%, " + fmt("%.1f", 100 * (0.5 + half_width)) + "%]"};
  });
  check("reports independent of --jobs", [&] { return jobs_invariance(root); });
  check("74-speaker partition sizes", partition_sizes);

  std::size_t passed = 0;
  for (const auto& [_, o] : results) passed += o.pass;
  std::cout << passed << "/" << results.size() << " criteria passed" << std::endl;
  fs::remove_all(root);
  return passed == results.size() ? 0 : 1;
}
