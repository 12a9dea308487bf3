#include "cmo/selfcheck.hpp"

#include "cmo/data_corpus.hpp"
#include "cmo/gradcheck.hpp"
#include "cmo/mixer.hpp"
#include "cmo/samplers.hpp"
#include "cmo/trainer.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace cmo {

namespace {

struct Check {
  const char* name;
  std::function<std::string()> body;  // empty string on success
};

std::vector<long> random_counts(Rng& rng, int classes) {
  std::vector<long> counts(static_cast<std::size_t>(classes));
  for (auto& n : counts) n = 1 + static_cast<long>(rng.below(500));
  return counts;
}

std::string distribution_sums() {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const ClassHistogram hist(random_counts(rng, 2 + static_cast<int>(rng.below(30))));
    for (const auto& s : {WeightStrategy::power(0.0), WeightStrategy::power(0.5), WeightStrategy::power(1.0),
                          WeightStrategy::power(2.0), WeightStrategy::effective()}) {
      const auto d = weighted_q(hist, s);
      if (std::abs(d.class_probs.sum() - 1.0) > 1e-9 || std::abs(d.instance_weights.sum() - 1.0) > 1e-9)
        return "Q does not sum to one";
      for (int j = 0; j < hist.num_classes(); ++j)
        for (int k = 0; k < hist.num_classes(); ++k)
          if (s.r > 0.0 && hist.count(j) < hist.count(k) && d.class_probs[j] < d.class_probs[k] - 1e-15)
            return "Q is not monotone in class count";
    }
    const auto p = original_p(hist);
    if (std::abs(p.class_probs.sum() - 1.0) > 1e-9 || std::abs(p.instance_weights.sum() - 1.0) > 1e-9)
      return "P does not sum to one";
  }
  return {};
}

std::string effective_number_bounds() {
  for (long total : {2L, 17L, 111L, 5000L}) {
    double prev = 0.0;
    for (long n = 1; n <= total; ++n) {
      const double e = effective_number(n, total);
      if (!(e > prev)) return "E(k) not strictly increasing";
      if (e < 1.0 - 1e-12 || (n >= 2 && !(e < static_cast<double>(n)))) return "E(k) outside [1, n_k)";
      prev = e;
    }
  }
  return {};
}

std::string region_invariants() {
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double lam = draw_lambda(1.0, rng);
    const MixRegion r = sample_region(32, 32, lam, rng);
    if (r.lambda_adj < r.lambda_raw) return "lambda_adj below lambda_raw";
    if (r.x1 < 0 || r.x2 > 32 || r.y1 < 0 || r.y2 > 32 || r.x1 > r.x2 || r.y1 > r.y2) return "region out of bounds";
  }
  return {};
}

std::string label_mixing() {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const int c = 2 + static_cast<int>(rng.below(20));
    const SoftLabel s = mix_labels(static_cast<int>(rng.below(static_cast<std::uint64_t>(c))),
                                   static_cast<int>(rng.below(static_cast<std::uint64_t>(c))), rng.uniform(), c);
    if (std::abs(s.probs.sum() - 1.0) > 1e-12 || (s.probs.array() != 0.0).count() > 2) return "bad soft label";
  }
  return {};
}

std::string loss_identity() {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const int c = 2 + static_cast<int>(rng.below(10));
    RowMatrixXd z(4, c);
    for (Index k = 0; k < z.size(); ++k) z.data()[k] = 3.0 * rng.normal();
    std::vector<int> yb(4), yf(4);
    std::vector<double> lam(4);
    RowMatrixXd targets(4, c);
    for (int r = 0; r < 4; ++r) {
      yb[static_cast<std::size_t>(r)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
      yf[static_cast<std::size_t>(r)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
      lam[static_cast<std::size_t>(r)] = rng.uniform();
      targets.row(r) = mix_labels(yb[static_cast<std::size_t>(r)], yf[static_cast<std::size_t>(r)],
                                  lam[static_cast<std::size_t>(r)], c)
                           .probs.transpose();
    }
    if (std::abs(soft_ce<double>(z, yb, yf, lam).loss - soft_label_ce<double>(z, targets)) > 1e-10)
      return "two-term loss differs from soft-label loss";
  }
  return {};
}

std::string gradients() {
  Rng rng(21);
  const ImageShape shape{6, 6, 2};
  for (auto arch : {Architecture::linear, Architecture::mlp, Architecture::tinyconv}) {
    const ModelSpec spec{arch, shape, 3, arch == Architecture::mlp ? std::vector<int>{7} : std::vector<int>{3, 4}};
    Model m = Model::initialized(spec, rng);
    for (Index i = 0; i < m.param_count(); ++i) m.params()[i] += 0.05 * rng.normal();
    RowMatrixXd x(3, shape.size());
    for (Index k = 0; k < x.size(); ++k) x.data()[k] = rng.uniform();
    const std::vector<int> yb{0, 1, 2}, yf{2, 2, 0};
    const std::vector<double> lam{0.3, 0.9, 0.5};
    const auto cmp = check_model_gradient(m, x, yb, yf, lam);
    if (!(cmp.relative_error < 1e-4)) {
      std::ostringstream s;
      s << to_string(arch) << " gradient relative error " << cmp.relative_error;
      return s.str();
    }
  }
  return {};
}

std::string schedule() {
  TrainConfig c;
  c.epochs = 200;
  c.base_lr = 0.1;
  c.warmup_epochs = 5;
  c.decay_epochs = {160, 180};
  c.decay_factor = 0.01;
  if (std::abs(lr_at(5, c) - 0.1) > 1e-15) return "lr after warmup is not the base rate";
  if (std::abs(lr_at(170, c) - 1e-3) > 1e-15) return "lr at epoch 170 is not 1e-3";
  if (std::abs(lr_at(190, c) - 1e-5) > 1e-17) return "lr at epoch 190 is not 1e-5";
  return {};
}

std::string dataset_roundtrip() {
  Rng rng(2);
  ContextShiftSpec spec;
  spec.num_classes = 3;
  spec.test_per_class = 2;
  spec.tail_max_count = 2;
  const ClassHistogram hist({5, 3, 1});
  const auto data = synth_context_shift(spec, hist, rng);
  const std::string bytes = serialize_dataset(data.train);
  const auto tmp = std::filesystem::temp_directory_path() /
                   ("cmo_selfcheck_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  save_dataset(data.train, tmp);
  const Dataset back = load_dataset(tmp);
  std::filesystem::remove(tmp);
  if (!(back == data.train)) return "dataset changed across save/load";
  if (serialize_dataset(back) != bytes) return "re-serialized bytes differ";
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const int k = data.train.label(i);
    if (k == 2 && data.train_background[i] != data.train_background_sets[2].front())
      return "tail class drew an unexposed background";
  }
  return {};
}

std::string shot_partition() {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto counts = random_counts(rng, 2 + static_cast<int>(rng.below(40)));
    const auto g = shot_groups(counts, {100, 20});
    std::vector<int> seen(counts.size(), 0);
    for (const auto* group : {&g.many, &g.medium, &g.few})
      for (int k : *group) ++seen[static_cast<std::size_t>(k)];
    for (int s : seen)
      if (s != 1) return "shot groups do not partition the classes";
  }
  return {};
}

}  // namespace

bool run_selfcheck(std::ostream& out) {
  const std::vector<Check> checks{
      {"sampling distributions normalized and monotone", distribution_sums},
      {"effective number bounds and monotonicity", effective_number_bounds},
      {"region clipping keeps lambda_adj >= lambda_raw", region_invariants},
      {"soft labels sum to one with <= 2 entries", label_mixing},
      {"two-term loss equals soft-label loss", loss_identity},
      {"analytic gradients match finite differences", gradients},
      {"warmup and step schedule", schedule},
      {"dataset file round-trip and exposure bookkeeping", dataset_roundtrip},
      {"shot groups partition the classes", shot_partition},
  };
  bool ok = true;
  for (const auto& c : checks) {
    std::string failure;
    try {
      failure = c.body();
    } catch (const std::exception& e) {
      failure = std::string("exception: ") + e.what();
    }
    out << (failure.empty() ? "PASS  " : "FAIL  ") << c.name;
    if (!failure.empty()) out << " -- " << failure;
    out << '\n';
    ok = ok && failure.empty();
  }
  return ok;
}

}  // namespace cmo
