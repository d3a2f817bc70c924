// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run everything
//   acceptance 2 5        run criteria 2 and 5 only

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "posttrain/checkpoint.h"
#include "posttrain/corpus.h"
#include "posttrain/encoder.h"
#include "posttrain/error.h"
#include "posttrain/inference.h"
#include "posttrain/metrics.h"
#include "posttrain/ops.h"
#include "posttrain/text_util.h"
#include "posttrain/training.h"
#include "synthetic.h"

namespace pt = posttrain;
namespace fs = std::filesystem;
using pt::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() /
               ("posttrain_acceptance_" + std::to_string(::getpid())) / name;
  fs::create_directories(p);
  return p;
}

const pt::Vocabulary& shared_vocab() {
  static const pt::Vocabulary vocab = pt::synthetic::vocabulary(600);
  return vocab;
}

pt::ModelConfig tiny_config() {
  auto c = pt::ModelConfig::from_preset("tiny");
  c.vocab_size = shared_vocab().size();
  return c;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;
using Inputs = std::vector<Tensor<double>>;
using OpFn = std::function<Tensor<double>(const Inputs&)>;

Tensor<double> random_tensor(pt::Shape shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(pt::shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor<double>(std::move(shape), std::move(v));
}

double weighted_sum(const Tensor<double>& out, const Tensor<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) s += out.data()[i] * w.data()[i];
  return s;
}

// Central difference of L = sum(w * f(x)) along a random direction of each
// input, against the analytic directional derivative.
double directional_check(const OpFn& f, const Inputs& inputs, Rng& rng) {
  constexpr double h = 1e-5;
  Inputs leaves;
  for (const auto& x : inputs) {
    auto c = x.clone();
    c.set_requires_grad(true);
    leaves.push_back(c);
  }
  const Tensor<double> out0 = [&] {
    pt::NoGradGuard g;
    return f(leaves);
  }();
  const Tensor<double> w = random_tensor(out0.shape(), rng);
  const Tensor<double> loss = pt::ops::sum(pt::ops::mul(f(leaves), w));
  pt::backward(loss);

  double worst = 0.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<double> dir(inputs[i].numel());
    for (auto& d : dir) d = normal(rng);
    double analytic = 0.0;
    if (leaves[i].has_grad()) {
      for (std::size_t k = 0; k < dir.size(); ++k) {
        analytic += leaves[i].grad()[k] * dir[k];
      }
    }
    auto eval = [&](double step) {
      pt::NoGradGuard g;
      Inputs moved;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        auto c = inputs[j].clone();
        if (j == i) {
          for (std::size_t k = 0; k < dir.size(); ++k) c.data()[k] += step * dir[k];
        }
        moved.push_back(c);
      }
      return weighted_sum(f(moved), w);
    };
    const double numeric = (eval(h) - eval(-h)) / (2 * h);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  }
  return worst;
}

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Directional check of a model-level loss with respect to every parameter.
double model_check(const std::function<Tensor<double>(
                       const pt::ModelParameters<double>&)>& loss_fn,
                   const pt::ModelParameters<double>& params, Rng& rng) {
  constexpr double h = 1e-5;
  auto p = params.clone();
  p.visit([](const std::string&, Tensor<double>& t) { t.set_requires_grad(true); });
  pt::backward(loss_fn(p));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> dirs;
  double analytic = 0.0;
  p.visit([&](const std::string&, Tensor<double>& t) {
    std::vector<double> d(t.numel());
    for (auto& x : d) x = normal(rng);
    if (t.has_grad()) {
      for (std::size_t k = 0; k < d.size(); ++k) analytic += t.grad()[k] * d[k];
    }
    dirs.push_back(std::move(d));
  });
  auto eval = [&](double step) {
    pt::NoGradGuard g;
    auto q = params.clone();
    std::size_t i = 0;
    q.visit([&](const std::string&, Tensor<double>& t) {
      for (std::size_t k = 0; k < t.numel(); ++k) t.data()[k] += step * dirs[i][k];
      ++i;
    });
    return loss_fn(q).item();
  };
  const double numeric = (eval(h) - eval(-h)) / (2 * h);
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

Outcome criterion_gradients() {
  Rng rng(2024);
  constexpr int kInstances = 20;
  std::map<std::string, double> worst;
  auto run = [&](const std::string& name, const std::function<double()>& inst) {
    double w = 0.0;
    for (int i = 0; i < kInstances; ++i) w = std::max(w, inst());
    worst[name] = w;
  };
  namespace ops = pt::ops;

  run("matmul", [&] {
    const auto m = dim(rng, 1, 6), k = dim(rng, 1, 6), n = dim(rng, 1, 6);
    return directional_check([](const Inputs& x) { return ops::matmul(x[0], x[1]); },
                             {random_tensor({m, k}, rng), random_tensor({k, n}, rng)}, rng);
  });
  run("matmul_transposed", [&] {
    const auto m = dim(rng, 1, 6), k = dim(rng, 1, 6), n = dim(rng, 1, 6);
    return directional_check(
        [](const Inputs& x) { return ops::matmul_transposed(x[0], x[1]); },
        {random_tensor({m, k}, rng), random_tensor({n, k}, rng)}, rng);
  });
  run("add", [&] {
    const pt::Shape s{dim(rng, 1, 5), dim(rng, 1, 5)};
    return directional_check([](const Inputs& x) { return ops::add(x[0], x[1]); },
                             {random_tensor(s, rng), random_tensor(s, rng)}, rng);
  });
  run("mul", [&] {
    const pt::Shape s{dim(rng, 1, 5), dim(rng, 1, 5)};
    return directional_check([](const Inputs& x) { return ops::mul(x[0], x[1]); },
                             {random_tensor(s, rng), random_tensor(s, rng)}, rng);
  });
  run("scale", [&] {
    const double c = std::uniform_real_distribution<double>(-3, 3)(rng);
    return directional_check([c](const Inputs& x) { return ops::scale(x[0], c); },
                             {random_tensor({dim(rng, 1, 5), dim(rng, 1, 5)}, rng)}, rng);
  });
  run("add_bias", [&] {
    const auto m = dim(rng, 1, 5), n = dim(rng, 1, 5);
    return directional_check([](const Inputs& x) { return ops::add_bias(x[0], x[1]); },
                             {random_tensor({m, n}, rng), random_tensor({n}, rng)}, rng);
  });
  run("sum", [&] {
    return directional_check([](const Inputs& x) { return ops::sum(x[0]); },
                             {random_tensor({dim(rng, 1, 5), dim(rng, 1, 5)}, rng)}, rng);
  });
  run("softmax_rows", [&] {
    return directional_check([](const Inputs& x) { return ops::softmax_rows(x[0]); },
                             {random_tensor({dim(rng, 1, 5), dim(rng, 2, 7)}, rng, -3, 3)},
                             rng);
  });
  // Width 2 normalizes every row to +-1, which has no gradient in x.
  run("layer_norm", [&] {
    const auto m = dim(rng, 1, 5), n = dim(rng, 3, 8);
    return directional_check(
        [](const Inputs& x) { return ops::layer_norm(x[0], x[1], x[2], 1e-12); },
        {random_tensor({m, n}, rng, -2, 2), random_tensor({n}, rng, 0.5, 1.5),
         random_tensor({n}, rng)},
        rng);
  });
  run("gelu", [&] {
    return directional_check([](const Inputs& x) { return ops::gelu(x[0]); },
                             {random_tensor({dim(rng, 1, 5), dim(rng, 1, 5)}, rng, -3, 3)},
                             rng);
  });
  run("dropout", [&] {
    const auto blocks = dim(rng, 1, 3);
    std::vector<std::uint64_t> seeds;
    for (std::size_t b = 0; b < blocks; ++b) seeds.push_back(rng());
    return directional_check(
        [seeds](const Inputs& x) { return ops::dropout(x[0], 0.3, seeds); },
        {random_tensor({blocks * dim(rng, 1, 4), dim(rng, 1, 6)}, rng)}, rng);
  });
  run("embedding", [&] {
    const auto v = dim(rng, 2, 8);
    std::vector<std::int32_t> ids(dim(rng, 1, 10));
    for (auto& id : ids) id = static_cast<std::int32_t>(dim(rng, 0, v - 1));
    return directional_check(
        [ids](const Inputs& x) { return ops::embedding(x[0], ids); },
        {random_tensor({v, dim(rng, 1, 5)}, rng)}, rng);
  });
  run("gather_rows", [&] {
    const auto m = dim(rng, 1, 6);
    std::vector<std::size_t> rows(dim(rng, 1, 8));
    for (auto& r : rows) r = dim(rng, 0, m - 1);
    return directional_check(
        [rows](const Inputs& x) { return ops::gather_rows(x[0], rows); },
        {random_tensor({m, dim(rng, 1, 5)}, rng)}, rng);
  });
  run("reshape", [&] {
    const auto a = dim(rng, 1, 4), b = dim(rng, 1, 4);
    return directional_check(
        [a, b](const Inputs& x) { return ops::reshape(x[0], pt::Shape{b, a}); },
        {random_tensor({a, b}, rng)}, rng);
  });
  run("transpose", [&] {
    return directional_check([](const Inputs& x) { return ops::transpose(x[0]); },
                             {random_tensor({dim(rng, 1, 5), dim(rng, 1, 5)}, rng)}, rng);
  });
  run("cross_entropy", [&] {
    const auto m = dim(rng, 1, 6), n = dim(rng, 2, 6);
    std::vector<std::int32_t> targets(m);
    for (auto& t : targets) t = static_cast<std::int32_t>(dim(rng, 0, n - 1));
    if (m > 1) targets[1] = -1;
    const bool normalize = dim(rng, 0, 1) == 1;
    return directional_check(
        [targets, normalize](const Inputs& x) {
          return ops::cross_entropy(x[0], targets,
                                    normalize ? std::optional<double>(2.5)
                                              : std::nullopt);
        },
        {random_tensor({m, n}, rng, 0.05, 1.0)}, rng);
  });
  run("attention", [&] {
    const auto batch = dim(rng, 1, 3), len = dim(rng, 2, 5);
    const auto heads = dim(rng, 1, 2), head_dim = dim(rng, 1, 3);
    const auto hidden = heads * head_dim;
    std::vector<std::uint8_t> valid(batch * len, 1);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto keep = dim(rng, 2, len);
      for (std::size_t i = keep; i < len; ++i) valid[b * len + i] = 0;
    }
    return directional_check(
        [valid, batch, heads](const Inputs& x) {
          return ops::attention(x[0], x[1], x[2], valid, batch, heads);
        },
        {random_tensor({batch * len, hidden}, rng), random_tensor({batch * len, hidden}, rng),
         random_tensor({batch * len, hidden}, rng)},
        rng);
  });

  // Whole-model losses on a very small encoder, dropout active with fixed
  // per-sequence seeds.
  const auto& vocab = shared_vocab();
  pt::ModelConfig mc;
  mc.preset = "check";
  mc.num_layers = 1;
  mc.hidden_size = 8;
  mc.num_heads = 2;
  mc.feedforward_size = 16;
  mc.vocab_size = vocab.size();
  mc.max_positions = 48;
  mc.dropout_rate = 0.1;
  pt::DkOptions dko;
  dko.max_len = 24;
  dko.duplicate_factor = 1;
  const auto dk = pt::make_dk_examples(pt::synthetic::reviews(60, 5), vocab, dko);
  auto mrc = pt::featurize_mrc(vocab, pt::synthetic::general_questions(60, 6), 40);
  std::erase_if(mrc, [](const pt::MrcFeature& f) { return !f.has_answer; });
  const auto ae = pt::featurize_bio(vocab, pt::synthetic::aspect_sentences(60, 7), 24);
  const auto asc = pt::featurize_asc(vocab, pt::synthetic::aspect_polarities(60, 8), 32);
  std::uint64_t instance = 0;
  auto model_run = [&](const std::string& name, auto make_loss) {
    run(name, [&] {
      ++instance;
      const auto params = pt::ModelParameters<double>::init(mc, 100 + instance);
      const std::size_t start = (instance * 3) % 50;
      return model_check(make_loss(start), params, rng);
    });
  };
  const std::vector<std::uint64_t> seeds = {11, 12, 13};
  pt::ForwardOptions fo;
  fo.train = true;
  fo.example_seeds = seeds;
  model_run("dk_loss", [&](std::size_t s) {
    return [&, s](const pt::ModelParameters<double>& p) {
      std::vector<const pt::DkExample*> b = {&dk[s % dk.size()], &dk[(s + 1) % dk.size()], &dk[(s + 2) % dk.size()]};
      return pt::dk_loss(p, mc, std::span<const pt::DkExample* const>(b), fo).total;
    };
  });
  model_run("mrc_loss", [&](std::size_t s) {
    return [&, s](const pt::ModelParameters<double>& p) {
      std::vector<const pt::MrcFeature*> b = {&mrc[s % mrc.size()], &mrc[(s + 1) % mrc.size()], &mrc[(s + 2) % mrc.size()]};
      return pt::mrc_loss(p, mc, std::span<const pt::MrcFeature* const>(b), fo);
    };
  });
  model_run("ae_loss", [&](std::size_t s) {
    return [&, s](const pt::ModelParameters<double>& p) {
      std::vector<const pt::BioFeature*> b = {&ae[s % ae.size()], &ae[(s + 1) % ae.size()], &ae[(s + 2) % ae.size()]};
      return pt::ae_loss(p, mc, std::span<const pt::BioFeature* const>(b), fo);
    };
  });
  model_run("asc_loss", [&](std::size_t s) {
    return [&, s](const pt::ModelParameters<double>& p) {
      std::vector<const pt::AscFeature*> b = {&asc[s % asc.size()], &asc[(s + 1) % asc.size()], &asc[(s + 2) % asc.size()]};
      return pt::asc_loss(p, mc, std::span<const pt::AscFeature* const>(b), fo);
    };
  });

  double overall = 0.0;
  std::string worst_name;
  for (const auto& [name, w] : worst) {
    if (w >= overall) {
      overall = w;
      worst_name = name;
    }
  }
  Outcome o;
  o.pass = overall < 1e-4;
  o.detail = std::to_string(worst.size()) + " operations x " +
             std::to_string(kInstances) + " instances, max relative error " +
             fmt("%.2e", overall) + " (" + worst_name + ")";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Sub-batch accumulation equivalence
// ---------------------------------------------------------------------------

struct JointData {
  std::vector<pt::DkExample> dk;
  std::vector<pt::MrcFeature> mrc;
};

JointData joint_data(std::size_t max_len, std::size_t dk_count,
                     std::size_t mrc_count, std::uint64_t seed) {
  const auto& vocab = shared_vocab();
  pt::DkOptions dko;
  dko.max_len = max_len;
  dko.duplicate_factor = 1;
  dko.seed = seed;
  JointData d;
  d.dk = pt::make_dk_examples(pt::synthetic::reviews(dk_count, seed), vocab, dko);
  for (auto& f : pt::featurize_mrc(vocab, pt::synthetic::general_questions(mrc_count, seed + 1),
                                   max_len)) {
    if (f.has_answer) d.mrc.push_back(std::move(f));
  }
  return d;
}

template <typename T>
double max_param_gap_across_u(const JointData& data, std::size_t batch) {
  const auto config = tiny_config();
  const auto init = pt::ModelParameters<T>::init(config, 77);
  std::vector<const pt::DkExample*> dk;
  std::vector<const pt::MrcFeature*> mrc;
  for (std::size_t i = 0; i < 2 * batch; ++i) {
    dk.push_back(&data.dk[i]);
    mrc.push_back(&data.mrc[i]);
  }
  std::vector<std::vector<T>> finals;
  for (std::size_t u : {1, 2, 4, 8}) {
    auto params = init.clone();
    pt::AdamOptions ao;
    ao.learning_rate = 1e-3;
    pt::Adam<T> adam(pt::posttrain_parameters(params), ao);
    for (std::uint64_t step = 0; step < 2; ++step) {
      pt::posttrain_step(params, config, adam,
                         std::span<const pt::DkExample* const>(dk).subspan(step * batch, batch),
                         std::span<const pt::MrcFeature* const>(mrc).subspan(step * batch, batch),
                         u, {5, step, true});
    }
    std::vector<T> flat;
    for (const auto& t : params.all()) flat.insert(flat.end(), t.data().begin(), t.data().end());
    finals.push_back(std::move(flat));
  }
  double gap = 0.0;
  for (std::size_t k = 1; k < finals.size(); ++k) {
    for (std::size_t i = 0; i < finals[0].size(); ++i) {
      gap = std::max(gap, std::abs(static_cast<double>(finals[k][i]) - finals[0][i]));
    }
  }
  return gap;
}

Outcome criterion_accumulation() {
  const auto data = joint_data(64, 40, 60, 31);
  const double gap64 = max_param_gap_across_u<double>(data, 16);
  const double gap32 = max_param_gap_across_u<float>(data, 16);
  Outcome o;
  o.pass = gap64 <= 1e-10 && gap32 <= 1e-5;
  o.detail = "u in {1,2,4,8}, batch 16 per knowledge, 2 steps, dropout on: "
             "max parameter gap " + fmt("%.2e", gap64) + " (f64), " +
             fmt("%.2e", gap32) + " (f32)";
  return o;
}

// ---------------------------------------------------------------------------
// 3. Scorer parity
// ---------------------------------------------------------------------------

struct ScoreCase {
  std::string pred;
  std::vector<std::string> golds;
  double em;
  double f1;
};

Outcome criterion_scorer() {
  const std::vector<ScoreCase> cases = {
      {"500GB", {"500GB"}, 1, 1},
      {"500GB", {"500GB which is also a great feature"}, 0, 2.0 / 7.0},
      {"", {"x"}, 0, 0},
      {"An Internal disk drive!", {"internal disk drive"}, 1, 1},
      {"the", {"a"}, 1, 1},
      {"The battery", {"battery"}, 1, 1},
      {"battery life", {"battery"}, 0, 2.0 / 3.0},
      {"battery", {"battery life"}, 0, 2.0 / 3.0},
      {"great screen", {"bad keyboard"}, 0, 0},
      {"screen", {"keyboard", "the screen", "screen size"}, 1, 1},
      {"big bright screen", {"bright", "bright screen"}, 0, 0.8},
      {"very very good", {"very good"}, 0, 0.8},
      {"very good", {"very very good"}, 0, 0.8},
      {"wi-fi", {"wifi"}, 1, 1},
      {"it's fast", {"its fast"}, 1, 1},
      {"theater", {"the ater"}, 0, 0},
      {"another", {"other"}, 0, 0},
      {"  fast\tcharging \n", {"fast charging"}, 1, 1},
      {"fast…", {"fast"}, 0, 0},
      {"Écran", {"écran"}, 1, 1},
      {"the the the", {""}, 1, 1},
      {"$5", {"5"}, 1, 1},
      {"a b c", {"b c d"}, 0, 0.8},
      {"Mac OS X", {"mac os", "os x"}, 0, 0.8},
      {"An apple", {"apple", "an orange"}, 1, 1},
      {"keys keys keys", {"keys"}, 0, 0.5},
  };
  std::size_t bad = 0;
  std::string first_bad;
  for (const auto& c : cases) {
    const auto s = pt::em_f1(c.pred, c.golds);
    if (std::abs(s.exact_match - c.em) > 1e-9 || std::abs(s.f1 - c.f1) > 1e-9) {
      if (bad++ == 0) first_bad = "'" + c.pred + "'";
    }
  }
  // The 2/7 case through the dataset-level scorer.
  const std::vector<pt::GoldQuestion> golds = {
      {"q1", {"500GB which is also a great feature"}}};
  const auto report = pt::squad_eval({{"q1", "500GB"}}, golds);
  const bool dataset_ok = std::abs(report.metric("exact_match")) < 1e-9 &&
                          std::abs(report.metric("f1") - 200.0 / 7.0) < 1e-9;
  Outcome o;
  o.pass = bad == 0 && dataset_ok;
  o.detail = std::to_string(cases.size()) + " crafted cases, " +
             std::to_string(bad) + " mismatches" +
             (bad ? " (first " + first_bad + ")" : "") +
             "; dataset F1 for the 2/7 case " + fmt("%.6f", report.metric("f1"));
  return o;
}

// ---------------------------------------------------------------------------
// 4. DK generator statistics
// ---------------------------------------------------------------------------

Outcome criterion_dk_statistics() {
  const auto& vocab = shared_vocab();
  pt::DkOptions options;
  options.max_len = 128;
  options.duplicate_factor = 5;
  options.seed = 4242;
  pt::DkReport report;
  const auto examples =
      pt::make_dk_examples(pt::synthetic::reviews(3000, 99), vocab, options, &report);

  // Recount from the emitted examples.
  std::size_t candidates = 0, masked = 0, as_mask = 0, as_random = 0, as_kept = 0;
  std::size_t cross = 0, special_targets = 0;
  for (const auto& ex : examples) {
    for (std::size_t i = 0; i < ex.input.length(); ++i) {
      if (ex.input.sides[i] != pt::Side::kNone) ++candidates;
    }
    for (const auto& t : ex.targets) {
      ++masked;
      const auto pos = static_cast<std::size_t>(t.position);
      if (ex.input.sides[pos] == pt::Side::kNone || t.original < pt::kNumSpecialTokens) {
        ++special_targets;
      }
      const auto id = ex.input.ids[pos];
      if (id == pt::kMaskId) {
        ++as_mask;
      } else if (id == t.original) {
        ++as_kept;
      } else {
        ++as_random;
      }
    }
    if (ex.label == pt::PairLabel::kCrossReview) ++cross;
  }
  const double rate = static_cast<double>(masked) / candidates;
  const double mask_share = static_cast<double>(as_mask) / masked;
  const double random_share = static_cast<double>(as_random) / masked;
  const double kept_share = static_cast<double>(as_kept) / masked;
  const double cross_share = static_cast<double>(cross) / examples.size();
  const bool counts_agree = report.candidates == candidates && report.selected == masked;

  Outcome o;
  o.pass = candidates >= 100000 && std::abs(rate - 0.15) <= 0.005 &&
           std::abs(mask_share - 0.8) <= 0.02 && std::abs(random_share - 0.1) <= 0.02 &&
           std::abs(kept_share - 0.1) <= 0.02 && std::abs(cross_share - 0.5) <= 0.02 &&
           special_targets == 0 && counts_agree;
  o.detail = std::to_string(candidates) + " candidates in " +
             std::to_string(examples.size()) + " examples: masked " +
             fmt("%.4f", rate) + ", mask/random/keep " + fmt("%.4f", mask_share) + "/" +
             fmt("%.4f", random_share) + "/" + fmt("%.4f", kept_share) +
             ", cross-review " + fmt("%.4f", cross_share) + ", special targets " +
             std::to_string(special_targets);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Span decoder safety
// ---------------------------------------------------------------------------

Outcome criterion_span_safety() {
  const auto& vocab = shared_vocab();
  Rng rng(55);
  const std::vector<std::string> words = {
      "the", "screen", "is", "bright.", "battery", "life", "okay", "zentrix",
      "founded", "by", "qwzx", "500gb", "fast", "really", "keyboard", "mushy"};
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t violations = 0, configs = 0, empty_docs = 0;
  while (configs < 10000) {
    auto sentence = [&](std::size_t n) {
      std::string s;
      for (std::size_t i = 0; i < n; ++i) {
        if (!s.empty()) s += std::string(dim(rng, 1, 2), ' ');
        s += words[dim(rng, 0, words.size() - 1)];
      }
      return s;
    };
    const std::string question = sentence(dim(rng, 1, 6));
    const std::string document = sentence(dim(rng, 1, 30));
    const auto q = pt::encode(vocab, question);
    const auto d = pt::encode(vocab, document);
    const std::size_t max_len = dim(rng, q.size() + 4, q.size() + 40);
    const auto input = pt::pack_pair(q, d, max_len);
    // Scores over the full or the trimmed length.
    const std::size_t len = dim(rng, 0, 1) ? input.length() : input.num_valid();
    std::vector<double> l1(len), l2(len);
    const double temp = std::exp(normal(rng) * 2.0);
    for (std::size_t i = 0; i < len; ++i) {
      l1[i] = normal(rng) * temp;
      l2[i] = normal(rng) * temp;
    }
    // Plant the global maxima on forbidden positions.
    l1[0] = 50.0;
    l1[static_cast<std::size_t>(input.sep_index) - 1] += 40.0 * dim(rng, 0, 1);
    l2[static_cast<std::size_t>(input.final_sep_index)] += 60.0 * dim(rng, 0, 1);
    if (len > input.num_valid()) l2[len - 1] = 70.0;
    ++configs;
    try {
      const auto p = pt::decode_span(l1, l2, input, document);
      const auto s = static_cast<std::size_t>(p.start);
      const auto e = static_cast<std::size_t>(p.end);
      bool ok = p.start > input.sep_index && p.end >= p.start &&
                p.end < input.final_sep_index;
      ok = ok && input.valid[s] && input.valid[e] &&
           input.sides[s] == pt::Side::kRight && input.sides[e] == pt::Side::kRight;
      ok = ok && p.text == document.substr(input.offsets[s].begin,
                                           input.offsets[e].end - input.offsets[s].begin) &&
           document.find(p.text) != std::string::npos;
      if (!ok) ++violations;
    } catch (const pt::InvalidArgument&) {
      ++empty_docs;
      if (input.num_valid() > static_cast<std::size_t>(input.sep_index) + 2) ++violations;
    }
  }
  Outcome o;
  o.pass = violations == 0;
  o.detail = std::to_string(configs) + " random configurations, " +
             std::to_string(violations) + " constraint violations (" +
             std::to_string(empty_docs) + " fully truncated documents rejected)";
  return o;
}

// ---------------------------------------------------------------------------
// 6. Overfit smoke
// ---------------------------------------------------------------------------

Outcome criterion_overfit() {
  const auto& vocab = shared_vocab();
  const auto config = tiny_config();
  pt::FineTuneConfig ft;
  ft.max_epochs = 200;
  ft.batch_size = 10;
  ft.learning_rate = 1e-3;
  ft.max_len = 64;
  ft.seed = 3;
  ft.stop_at_metric = 100.0;

  std::string detail;
  bool pass = true;
  auto run = [&](pt::Task task, const pt::TaskData& data, const char* metric) {
    ft.task = task;
    const auto init = pt::ModelParameters<float>::init(config, 17);
    const auto r = pt::finetune(ft, config, vocab, init, data, data);
    const double value = r.best.metric(metric);
    const bool ok = value >= 100.0 - 1e-9 && r.steps <= 200;
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += std::string(pt::to_string(task)) + " " + metric + "=" + fmt("%.2f", value) +
              " after " + std::to_string(r.steps) + " steps";
  };
  pt::TaskData rrc, ae, asc;
  rrc.rrc = pt::synthetic::review_questions(10, 61);
  ae.ae = pt::synthetic::aspect_sentences(10, 62);
  asc.asc = pt::synthetic::aspect_polarities(10, 63);
  run(pt::Task::kRrc, rrc, "exact_match");
  run(pt::Task::kAe, ae, "f1");
  run(pt::Task::kAsc, asc, "acc");
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 7. Directional post-training benefit
// ---------------------------------------------------------------------------

Outcome criterion_posttraining_benefit() {
  const auto& vocab = shared_vocab();
  const auto config = tiny_config();
  constexpr std::size_t kMaxLen = 64;

  pt::DkOptions dko;
  dko.max_len = kMaxLen;
  dko.duplicate_factor = 5;
  dko.seed = 8;
  const auto dk = pt::make_dk_examples(pt::synthetic::reviews(1600, 21), vocab, dko);
  const auto mrc =
      pt::featurize_mrc(vocab, pt::synthetic::general_questions(8000, 22), kMaxLen);

  pt::PostTrainConfig pc;
  pc.max_len = kMaxLen;
  pc.total_steps = 500;
  pc.learning_rate = 1e-3;
  pc.seed = 9;
  pt::TrainingState<float> state;
  state.params = pt::ModelParameters<float>::init(config, 1000);
  const auto dir = scratch_dir("posttrain");
  pt::StepReport first, last;
  pt::posttrain_run<float>(pc, config, vocab.digest(), state, dk, mrc, dir.string(),
                           [&](const pt::StepReport& r) {
                             if (r.step == 1) first = r;
                             last = r;
                           });

  const auto test = pt::synthetic::review_questions(500, 5000);
  pt::FineTuneConfig ft;
  ft.task = pt::Task::kRrc;
  ft.max_epochs = 15;
  ft.batch_size = 10;
  ft.learning_rate = 3e-4;
  ft.max_len = kMaxLen;

  int wins = 0;
  double sum_pt = 0.0, sum_rand = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    pt::TaskData train, valid, held_out;
    train.rrc = pt::synthetic::review_questions(50, 6000 + seed);
    valid.rrc = pt::synthetic::review_questions(100, 7000 + seed);
    held_out.rrc = test;
    ft.seed = seed;
    const auto from_pt = pt::finetune(ft, config, vocab, state.params.clone(), train, valid);
    const auto from_rand = pt::finetune(
        ft, config, vocab, pt::ModelParameters<float>::init(config, 2000 + seed), train, valid);
    const double f1_pt =
        pt::evaluate_task(pt::Task::kRrc, from_pt.params, config, vocab, held_out, kMaxLen)
            .metric("f1");
    const double f1_rand =
        pt::evaluate_task(pt::Task::kRrc, from_rand.params, config, vocab, held_out, kMaxLen)
            .metric("f1");
    sum_pt += f1_pt;
    sum_rand += f1_rand;
    if (f1_pt > f1_rand) ++wins;
  }
  Outcome o;
  o.pass = wins >= 8;
  o.detail = "post-trained init wins " + std::to_string(wins) +
             "/10 seeds; mean held-out F1 " + fmt("%.2f", sum_pt / 10) + " vs " +
             fmt("%.2f", sum_rand / 10) + "; joint loss " + fmt("%.3f", first.total) +
             " -> " + fmt("%.3f", last.total) + " over 500 steps";
  return o;
}

// ---------------------------------------------------------------------------
// 8. Checkpoint round trip
// ---------------------------------------------------------------------------

template <typename T>
bool round_trip(const fs::path& dir, std::string& why) {
  const auto& vocab = shared_vocab();
  const auto config = tiny_config();
  auto params = pt::ModelParameters<T>::init(config, 5);
  const auto data = joint_data(48, 20, 20, 3);
  std::vector<const pt::DkExample*> dk = {&data.dk[0], &data.dk[1]};
  std::vector<const pt::MrcFeature*> mrc = {&data.mrc[0], &data.mrc[1]};
  pt::Adam<T> adam(pt::posttrain_parameters(params), {});
  pt::posttrain_step(params, config, adam, std::span<const pt::DkExample* const>(dk),
                     std::span<const pt::MrcFeature* const>(mrc), 1, {1, 0, true});
  pt::CheckpointMeta meta;
  meta.config = config;
  meta.seed = 5;
  meta.step = 1;
  meta.vocab_digest = vocab.digest();
  const std::string a = (dir / "a.ptck").string(), b = (dir / "b.ptck").string();
  pt::save_checkpoint(a, meta, params, &adam.state());
  const auto loaded = pt::load_checkpoint<T>(a, vocab.digest());
  pt::save_checkpoint(b, loaded.meta, loaded.params, loaded.adam ? &*loaded.adam : nullptr);
  if (pt::text::read_file(a) != pt::text::read_file(b)) {
    why = "re-saved file differs";
    return false;
  }
  auto other = vocab.digest();
  other[0] ^= 0xFF;
  try {
    pt::load_checkpoint<T>(a, other);
    why = "wrong digest accepted";
    return false;
  } catch (const pt::DataError& e) {
    if (std::string(e.what()) != "vocabulary digest mismatch") {
      why = std::string("unexpected message: ") + e.what();
      return false;
    }
  }
  return true;
}

Outcome criterion_checkpoint() {
  const auto dir = scratch_dir("checkpoint");
  std::string why32, why64;
  const bool ok32 = round_trip<float>(dir, why32);
  const bool ok64 = round_trip<double>(dir, why64);
  Outcome o;
  o.pass = ok32 && ok64;
  o.detail = o.pass ? "save-load-save byte-identical (f32, f64); wrong digest rejected "
                      "with 'vocabulary digest mismatch'"
                    : "f32: " + (ok32 ? std::string("ok") : why32) +
                          ", f64: " + (ok64 ? std::string("ok") : why64);
  return o;
}

// ---------------------------------------------------------------------------
// 9. Chunk F1 and Macro-F1
// ---------------------------------------------------------------------------

Outcome criterion_chunk_macro() {
  using C = pt::ChunkSpan;
  using P = pt::Polarity;
  int bad = 0;
  auto near = [&](double a, double b) {
    if (std::abs(a - b) > 1e-12) ++bad;
  };
  {
    const std::vector<std::vector<C>> pred = {{{0, 2}}};
    const std::vector<std::vector<C>> gold = {{{0, 2}, {4, 4}}};
    const auto r = pt::chunk_f1(pred, gold);
    near(r.precision, 1.0);
    near(r.recall, 0.5);
    near(r.f1, 2.0 / 3.0);
  }
  {
    const std::vector<std::vector<C>> gold = {{{0, 2}, {4, 4}}, {{1, 1}}};
    const auto r = pt::chunk_f1(gold, gold);
    near(r.f1, 1.0);
  }
  {
    const std::vector<std::vector<C>> pred = {{{0, 0}}};
    const std::vector<std::vector<C>> gold = {{}};
    const auto r = pt::chunk_f1(pred, gold);
    near(r.precision, 0.0);
    near(r.recall, 0.0);
    near(r.f1, 0.0);
  }
  {
    const std::vector<P> gold = {P::kPositive, P::kNegative, P::kNeutral};
    const auto r = pt::acc_macro_f1(gold, gold);
    near(r.accuracy, 100.0);
    near(r.macro_f1, 100.0);
  }
  {
    const std::vector<P> gold = {P::kPositive, P::kPositive, P::kNegative, P::kNeutral};
    const std::vector<P> pred = {P::kPositive, P::kNegative, P::kNegative, P::kNeutral};
    const auto r = pt::acc_macro_f1(pred, gold);
    near(r.accuracy, 75.0);
    near(r.macro_f1, 700.0 / 9.0);
  }
  {
    const std::vector<P> gold = {P::kPositive, P::kNegative, P::kNeutral};
    const std::vector<P> pred = {P::kPositive, P::kPositive, P::kPositive};
    const auto r = pt::acc_macro_f1(pred, gold);
    near(r.accuracy, 100.0 / 3.0);
    near(r.macro_f1, 50.0 / 3.0);
  }
  return {bad == 0, "6 hand-computed confusion cases, " + std::to_string(bad) +
                        " mismatched values"};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;  // 0: no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", 60, criterion_gradients},
      {2, "sub-batch accumulation equivalence", 60, criterion_accumulation},
      {3, "scorer parity", 0, criterion_scorer},
      {4, "DK generator statistics", 60, criterion_dk_statistics},
      {5, "span decoder safety", 0, criterion_span_safety},
      {6, "overfit smoke", 300, criterion_overfit},
      {7, "post-training benefit", 900, criterion_posttraining_benefit},
      {8, "checkpoint round trip", 0, criterion_checkpoint},
      {9, "chunk F1 and Macro-F1", 0, criterion_chunk_macro},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool pass = o.pass;
    std::string timing = fmt("%.1fs", seconds);
    if (c.budget_seconds > 0) {
      timing += " of " + fmt("%.0fs", c.budget_seconds);
      if (seconds > c.budget_seconds) pass = false;
    }
    if (!pass) ++failures;
    std::printf("criterion %d [%s]: %s - %s (%s)\n", c.id, c.name, pass ? "PASS" : "FAIL",
                o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  }
  std::error_code ec;
  fs::remove_all(fs::temp_directory_path() /
                     ("posttrain_acceptance_" + std::to_string(::getpid())),
                 ec);
  return failures == 0 ? 0 : 1;
}
