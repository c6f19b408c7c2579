#include "cdikt/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "cdikt/cdis.hpp"
#include "cdikt/cluster.hpp"
#include "cdikt/eval.hpp"
#include "cdikt/gradcheck.hpp"
#include "cdikt/memory.hpp"
#include "cdikt/ops.hpp"
#include "cdikt/oracle.hpp"
#include "cdikt/rng.hpp"

namespace cdikt {

namespace {

class Recorder {
 public:
  explicit Recorder(std::string name) : start_(std::chrono::steady_clock::now()) { report_.name = std::move(name); }

  void check(bool ok, const std::function<std::string()>& describe) {
    ++report_.trials;
    if (!ok) report_.failures.push_back(describe());
  }

  // Exceptions inside a trial count as a failure of that trial.
  void guarded(const std::string& label, const std::function<void()>& trial) {
    try {
      trial();
    } catch (const std::exception& e) {
      ++report_.trials;
      report_.failures.push_back(label + ": threw " + e.what());
    }
  }

  SuiteReport finish() {
    report_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return std::move(report_);
  }

 private:
  SuiteReport report_;
  std::chrono::steady_clock::time_point start_;
};

std::string num(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = scale * rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal();
  normalize_in_place(v);
  return v;
}

using Params = std::vector<std::pair<std::string, Tensor>>;
using GradCase = std::function<GradCheckReport(std::uint64_t)>;

GradCheckReport check_input(const std::function<Tensor(const Tensor&)>& f, Shape shape, std::uint64_t seed,
                            double scale = 1.0) {
  Rng rng(seed);
  Tensor x = random_tensor(std::move(shape), rng, scale, true);
  return check_parameters([&] { return f(x); }, {{"x", x}});
}

// Weighted sum so every output coordinate carries a distinct gradient.
Tensor probe(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

std::vector<std::pair<std::string, GradCase>> primitive_cases() {
  std::vector<std::pair<std::string, GradCase>> c;
  c.emplace_back("add", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng, 1.0, true), b = random_tensor({3, 4}, rng, 1.0, true);
    Tensor w = random_tensor({3, 4}, rng);
    return check_parameters([&] { return probe(add(a, b), w); }, {{"a", a}, {"b", b}});
  });
  c.emplace_back("sub", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({5}, rng, 1.0, true), b = random_tensor({5}, rng, 1.0, true);
    Tensor w = random_tensor({5}, rng);
    return check_parameters([&] { return probe(sub(a, b), w); }, {{"a", a}, {"b", b}});
  });
  c.emplace_back("mul", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({2, 3}, rng, 1.0, true), b = random_tensor({2, 3}, rng, 1.0, true);
    return check_parameters([&] { return sum(mul(a, b)); }, {{"a", a}, {"b", b}});
  });
  c.emplace_back("scale", [](std::uint64_t s) {
    Rng rng(s);
    Tensor w = random_tensor({6}, rng);
    return check_input([&](const Tensor& x) { return probe(scale(x, -2.5), w); }, {6}, s + 1);
  });
  c.emplace_back("add_n", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({4}, rng, 1.0, true), b = random_tensor({4}, rng, 1.0, true);
    Tensor d = random_tensor({4}, rng, 1.0, true), w = random_tensor({4}, rng);
    return check_parameters(
        [&] {
          std::vector<Tensor> xs{a, b, d};
          return probe(add_n(xs), w);
        },
        {{"a", a}, {"b", b}, {"c", d}});
  });
  c.emplace_back("sigmoid", [](std::uint64_t s) {
    Rng rng(s);
    Tensor w = random_tensor({3, 4}, rng);
    return check_input([&](const Tensor& x) { return probe(sigmoid(x), w); }, {3, 4}, s + 1, 2.0);
  });
  c.emplace_back("gelu", [](std::uint64_t s) {
    Rng rng(s);
    Tensor w = random_tensor({10}, rng);
    return check_input([&](const Tensor& x) { return probe(gelu(x), w); }, {10}, s + 1, 2.0);
  });
  c.emplace_back("reshape", [](std::uint64_t s) {
    Rng rng(s);
    Tensor w = random_tensor({4, 3}, rng);
    return check_input([&](const Tensor& x) { return probe(reshape(x, {4, 3}), w); }, {3, 4}, s + 1);
  });
  c.emplace_back("concat", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 2}, rng, 1.0, true), b = random_tensor({3, 4}, rng, 1.0, true);
    Tensor w = random_tensor({3, 6}, rng);
    return check_parameters(
        [&] {
          std::vector<Tensor> parts{a, b};
          return probe(concat(parts, 1), w);
        },
        {{"a", a}, {"b", b}});
  });
  c.emplace_back("sum", [](std::uint64_t s) {
    return check_input([](const Tensor& x) { return sum(x); }, {7}, s);
  });
  c.emplace_back("mean", [](std::uint64_t s) {
    return check_input([](const Tensor& x) { return mean(x); }, {2, 5}, s);
  });
  c.emplace_back("pool_max", [](std::uint64_t s) {
    Rng rng(s);
    Tensor w = random_tensor({3, 4}, rng);
    return check_input([&](const Tensor& x) { return probe(pool_axis(x, 1, PoolMode::kMax), w); }, {3, 5, 4}, s + 1);
  });
  c.emplace_back("pool_avg", [](std::uint64_t s) {
    Rng rng(s);
    Tensor w = random_tensor({3, 5}, rng);
    return check_input([&](const Tensor& x) { return probe(pool_axis(x, 2, PoolMode::kAvg), w); }, {3, 5, 4}, s + 1);
  });
  c.emplace_back("global_avg_pool", [](std::uint64_t s) {
    Rng rng(s);
    Tensor w = random_tensor({3}, rng);
    return check_input([&](const Tensor& x) { return probe(global_avg_pool(x), w); }, {3, 4, 4}, s + 1);
  });
  c.emplace_back("conv2d_depthwise", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({2, 5, 5}, rng, 1.0, true);
    Tensor k = random_tensor({2, 3, 3}, rng, 1.0, true);
    Tensor b = random_tensor({2}, rng, 1.0, true);
    Tensor w = random_tensor({2, 3, 3}, rng);
    return check_parameters([&] { return probe(conv2d_depthwise(x, k, &b, 2, 1), w); },
                            {{"x", x}, {"kernel", k}, {"bias", b}});
  });
  c.emplace_back("conv2d_pointwise", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({3, 2, 2}, rng, 1.0, true);
    Tensor wt = random_tensor({4, 3}, rng, 1.0, true);
    Tensor b = random_tensor({4}, rng, 1.0, true);
    Tensor w = random_tensor({4, 2, 2}, rng);
    return check_parameters([&] { return probe(conv2d_pointwise(x, wt, &b), w); },
                            {{"x", x}, {"weights", wt}, {"bias", b}});
  });
  c.emplace_back("linear", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({2, 3}, rng, 1.0, true);
    Tensor wt = random_tensor({4, 3}, rng, 1.0, true);
    Tensor b = random_tensor({4}, rng, 1.0, true);
    Tensor w = random_tensor({2, 4}, rng);
    return check_parameters([&] { return probe(linear(x, wt, &b), w); }, {{"x", x}, {"weights", wt}, {"bias", b}});
  });
  c.emplace_back("matmul", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng, 1.0, true), b = random_tensor({4, 2}, rng, 1.0, true);
    Tensor w = random_tensor({3, 2}, rng);
    return check_parameters([&] { return probe(matmul(a, b), w); }, {{"a", a}, {"b", b}});
  });
  c.emplace_back("normalize_layer", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({5, 3}, rng, 1.0, true);
    Tensor g = random_tensor({5}, rng, 1.0, true), b = random_tensor({5}, rng, 1.0, true);
    Tensor w = random_tensor({5, 3}, rng);
    return check_parameters([&] { return probe(normalize_layer(x, g, b), w); },
                            {{"x", x}, {"scale", g}, {"shift", b}});
  });
  c.emplace_back("l2_normalize", [](std::uint64_t s) {
    Rng rng(s);
    Tensor w = random_tensor({3, 4}, rng);
    return check_input([&](const Tensor& x) { return probe(l2_normalize(x), w); }, {3, 4}, s + 1);
  });
  c.emplace_back("mse", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng, 1.0, true), b = random_tensor({3, 4}, rng, 1.0, true);
    return check_parameters([&] { return mse(a, b); }, {{"a", a}, {"b", b}});
  });
  c.emplace_back("cross_entropy", [](std::uint64_t s) {
    const std::vector<std::size_t> labels{0, 3, 1};
    return check_input([&](const Tensor& x) { return cross_entropy(x, labels); }, {3, 4}, s, 2.0);
  });
  c.emplace_back("permute", [](std::uint64_t s) {
    Rng rng(s);
    Tensor w = random_tensor({4, 2, 3}, rng);
    return check_input([&](const Tensor& x) { return probe(permute(x, {2, 0, 1}), w); }, {2, 3, 4}, s + 1);
  });
  c.emplace_back("expand", [](std::uint64_t s) {
    Rng rng(s);
    Tensor w = random_tensor({3, 5}, rng);
    return check_input([&](const Tensor& x) { return probe(expand(x, {3, 5}), w); }, {3, 1}, s + 1);
  });
  return c;
}

CdisConfig block_config(std::uint64_t seed) {
  CdisConfig c;
  c.input_size = 16;
  c.widths = {4, 8};
  c.num_classes = 3;
  c.seed = seed;
  return c;
}

Params with_prefix(const CdisNet& net, const std::string& prefix) {
  Params out;
  for (const auto& item : net.params().items()) {
    if (item.first.rfind(prefix, 0) == 0) out.push_back(item);
  }
  return out;
}

Params plus(Params a, const Params& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Outputs standing in for a forward pass, so each loss term can be checked
// against its own inputs.
struct FakeBatch {
  std::vector<CdisOutputs> drone, satellite;
  std::vector<std::size_t> labels;
  Params leaves;

  FakeBatch(Rng& rng, std::size_t pairs, std::size_t C, std::size_t L, std::size_t classes) {
    auto side = [&](std::vector<CdisOutputs>& out, const std::string& tag) {
      for (std::size_t i = 0; i < pairs; ++i) {
        CdisOutputs o;
        o.sifl_out = random_tensor({C, L}, rng, 1.0, true);
        o.pooled = random_tensor({C}, rng, 1.0, true);
        for (int b = 0; b < 3; ++b) o.class_logits.push_back(random_tensor({classes}, rng, 2.0, true));
        const std::string p = tag + std::to_string(i);
        leaves.emplace_back(p + ".sifl", o.sifl_out);
        leaves.emplace_back(p + ".pooled", o.pooled);
        for (int b = 0; b < 3; ++b) leaves.emplace_back(p + ".logits" + std::to_string(b), o.class_logits[b]);
        out.push_back(std::move(o));
      }
    };
    side(drone, "drone");
    side(satellite, "satellite");
    for (std::size_t i = 0; i < pairs; ++i) labels.push_back(rng.below(classes));
  }

  L1Terms terms() const { return loss_l1(drone, satellite, labels, LossWeights{}, 0.1); }
};

std::vector<std::pair<std::string, GradCase>> block_cases() {
  std::vector<std::pair<std::string, GradCase>> c;
  const std::size_t C = 8, L = 16;
  c.emplace_back("sifl_stage1", [=](std::uint64_t s) {
    CdisNet net(block_config(s));
    Rng rng(s + 100);
    Tensor x = random_tensor({C, L}, rng, 1.0, true), w = random_tensor({C, L}, rng);
    return check_parameters([&] { return probe(net.sifl_stage1(x), w); }, {{"input", x}});
  });
  c.emplace_back("channel_refinement", [=](std::uint64_t s) {
    CdisNet net(block_config(s));
    Rng rng(s + 200);
    Tensor x = random_tensor({C, L}, rng), w = random_tensor({C, L}, rng);
    GradCheckOptions o;
    o.samples = 6;
    o.seed = s;
    return check_parameters([&] { return probe(net.sifl_stage1(x), w); },
                            plus(with_prefix(net, "sifl.s1.cwr"), with_prefix(net, "sifl.s1.gate")), o);
  });
  c.emplace_back("sifl_stage2", [=](std::uint64_t s) {
    CdisNet net(block_config(s));
    Rng rng(s + 300);
    Tensor x = random_tensor({C, L}, rng, 1.0, true), w = random_tensor({C, L}, rng);
    GradCheckOptions o;
    o.samples = 6;
    o.seed = s;
    return check_parameters([&] { return probe(net.sifl_stage2(x), w); },
                            plus({{"input", x}}, with_prefix(net, "sifl.s2.mlp")), o);
  });
  c.emplace_back("squeeze_excitation", [=](std::uint64_t s) {
    CdisNet net(block_config(s));
    Rng rng(s + 400);
    Tensor x = random_tensor({C, L}, rng, 1.0, true), w = random_tensor({C}, rng);
    return check_parameters([&] { return probe(net.se_weights(x), w); },
                            plus({{"input", x}}, with_prefix(net, "sifl.s2.se")));
  });
  c.emplace_back("siel", [=](std::uint64_t s) {
    CdisNet net(block_config(s));
    Rng rng(s + 500);
    Tensor x = random_tensor({C, 4, 4}, rng, 1.0, true);
    Tensor wh = random_tensor({C, 4, 4}, rng), ww = random_tensor({C, 4, 4}, rng);
    GradCheckOptions o;
    o.samples = 12;
    o.seed = s;
    return check_parameters(
        [&] {
          auto out = net.siel(x);
          return add(probe(out.siel_h, wh), probe(out.siel_w, ww));
        },
        plus({{"input", x}}, with_prefix(net, "siel.")), o);
  });
  c.emplace_back("classifier", [=](std::uint64_t s) {
    CdisNet net(block_config(s));
    Rng rng(s + 600);
    Tensor pooled = random_tensor({C}, rng, 1.0, true);
    Tensor h = random_tensor({C, 4, 4}, rng, 1.0, true), w = random_tensor({C, 4, 4}, rng, 1.0, true);
    const std::vector<std::size_t> label{s % 3};
    GradCheckOptions o;
    o.samples = 4;
    o.seed = s;
    return check_parameters(
        [&] {
          auto logits = net.classifier_head(pooled, h, w);
          return add_n(std::vector<Tensor>{cross_entropy(logits[0], label), cross_entropy(logits[1], label),
                                           cross_entropy(logits[2], label)});
        },
        plus({{"pooled", pooled}, {"siel_h", h}, {"siel_w", w}}, with_prefix(net, "cls.")), o);
  });
  c.emplace_back("backbone", [=](std::uint64_t s) {
    CdisNet net(block_config(s));
    Rng rng(s + 700);
    Tensor img = random_tensor({3, 16, 16}, rng);
    Tensor w = random_tensor({C}, rng);
    GradCheckOptions o;
    o.samples = 2;
    o.seed = s;
    return check_parameters([&] { return probe(net.embed(img), w); }, with_prefix(net, "backbone."), o);
  });
  c.emplace_back("loss_mse", [](std::uint64_t s) {
    Rng rng(s + 800);
    FakeBatch batch(rng, 2, 4, 3, 3);
    return check_parameters([&] { return batch.terms().mse; }, batch.leaves);
  });
  c.emplace_back("loss_ce", [](std::uint64_t s) {
    Rng rng(s + 900);
    FakeBatch batch(rng, 2, 4, 3, 3);
    return check_parameters([&] { return batch.terms().ce; }, batch.leaves);
  });
  c.emplace_back("loss_infonce", [](std::uint64_t s) {
    Rng rng(s + 1000);
    FakeBatch batch(rng, 3, 4, 3, 3);
    return check_parameters([&] { return batch.terms().infonce; }, batch.leaves);
  });
  c.emplace_back("memory_contrastive", [](std::uint64_t s) {
    Rng rng(s + 1100);
    std::vector<std::vector<double>> rows;
    for (int k = 0; k < 5; ++k) rows.push_back(random_unit(rng, 6));
    ClusterAssignment a;
    for (int k = 0; k < 5; ++k) a.labels.push_back(k);
    a.cluster_count = 5;
    auto memory = build_memory(View::kDrone, rows, a);
    const std::vector<std::size_t> positives{rng.below(5), rng.below(5), rng.below(5)};
    return check_input(
        [&](const Tensor& x) { return contrastive_loss(l2_normalize(x), memory, positives, 0.5); }, {3, 6}, s);
  });
  c.emplace_back("end_to_end", [](std::uint64_t s) {
    CdisNet net(block_config(s));
    Rng rng(s + 1200);
    std::vector<Tensor> drones{random_tensor({3, 16, 16}, rng), random_tensor({3, 16, 16}, rng)};
    std::vector<Tensor> sats{random_tensor({3, 16, 16}, rng), random_tensor({3, 16, 16}, rng)};
    const std::vector<std::size_t> labels{0, 2};
    auto loss = [&] {
      std::vector<CdisOutputs> d, sa;
      for (const auto& img : drones) d.push_back(net.forward(img));
      for (const auto& img : sats) sa.push_back(net.forward(img));
      return loss_l1(d, sa, labels, LossWeights{}, 0.1).total;
    };
    Params picked;
    const auto& all = net.params().items();
    for (int i = 0; i < 10; ++i) picked.push_back(all[rng.below(all.size())]);
    GradCheckOptions o;
    o.samples = 1;
    o.seed = s;
    return check_parameters(loss, picked, o);
  });
  return c;
}

std::vector<std::vector<double>> blobs(Rng& rng, std::size_t n, std::size_t dim, std::size_t centers,
                                       double spread) {
  std::vector<std::vector<double>> c(centers, std::vector<double>(dim));
  for (auto& v : c)
    for (double& x : v) x = rng.normal();
  std::vector<std::vector<double>> pts;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> p = c[rng.below(centers)];
    const bool outlier = rng.uniform() < 0.15;
    for (double& x : p) x = outlier ? rng.normal() : x + spread * rng.normal();
    normalize_in_place(p);
    pts.push_back(std::move(p));
  }
  return pts;
}

ClusterMemory memory_of(const std::vector<std::vector<double>>& rows, double momentum = kDefaultMomentum) {
  ClusterAssignment a;
  for (std::size_t i = 0; i < rows.size(); ++i) a.labels.push_back(static_cast<int>(i));
  a.cluster_count = rows.size();
  return build_memory(View::kDrone, rows, a, momentum);
}

RetrievalResult result_with(std::vector<std::vector<std::size_t>> orders) {
  RetrievalResult r;
  for (auto& o : orders) {
    Ranking rk;
    rk.order = std::move(o);
    rk.scores.assign(rk.order.size(), 0.0);
    r.rankings.push_back(std::move(rk));
  }
  return r;
}

double gaussian_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
}

}  // namespace

SuiteReport gradient_suite(std::uint64_t seed, std::size_t seeds) {
  Recorder rec("gradient");
  auto cases = primitive_cases();
  auto blocks = block_cases();
  cases.insert(cases.end(), blocks.begin(), blocks.end());
  for (std::size_t i = 0; i < seeds; ++i) {
    const std::uint64_t s = derive_seed(seed, i) % 1000003;
    for (const auto& [name, run] : cases) {
      const std::string label = name + " seed " + std::to_string(s);
      rec.guarded(label, [&] {
        const auto r = run(s);
        rec.check(r.passed, [&] {
          return label + ": relative error " + num(r.max_relative_error) + " in " + r.worst_tensor;
        });
      });
    }
  }
  return rec.finish();
}

SuiteReport dbscan_suite(std::uint64_t seed, std::size_t instances) {
  Recorder rec("dbscan");
  Rng rng(derive_seed(seed, "dbscan"));
  for (std::size_t trial = 0; trial < instances; ++trial) {
    const std::size_t n = 1 + rng.below(200);
    const std::size_t dim = 2 + rng.below(31);
    const double eps = trial % 3 == 0 ? kSatelliteEps : trial % 3 == 1 ? kDroneEps : rng.uniform(0.02, 0.6);
    const std::size_t min_samples = trial % 2 == 0 ? 4 : 1 + rng.below(6);
    auto pts = blobs(rng, n, dim, 1 + rng.below(5), rng.uniform(0.05, 0.8));
    std::span<const std::vector<double>> s(pts);
    const std::string label = "instance " + std::to_string(trial) + " (n " + std::to_string(n) + ", eps " +
                              num(eps) + ", min_samples " + std::to_string(min_samples) + ")";
    rec.guarded(label, [&] {
      const auto got = dbscan(s, DbscanParams{eps, min_samples});
      const auto want = oracle::reference_dbscan(s, eps, min_samples);
      rec.check(oracle::same_partition(got.labels, want.labels) && got.cluster_count == want.cluster_count,
                [&] {
                  return label + ": " + std::to_string(got.cluster_count) + " clusters vs reference " +
                         std::to_string(want.cluster_count);
                });
    });
  }
  return rec.finish();
}

SuiteReport memory_suite(std::uint64_t seed) {
  Recorder rec("memory");
  Rng rng(derive_seed(seed, "memory"));
  for (double alpha : {0.0, 0.1, 0.2, 1.0}) {
    // Orthogonal unit vectors make the blend exact in binary.
    const std::vector<double> phi{1.0, 0.0}, q{0.0, 1.0};
    const auto pre = momentum_blend(phi, q, alpha);
    rec.check(pre[0] == alpha && pre[1] == 1.0 - alpha, [&] {
      return "blend alpha " + num(alpha) + ": got (" + num(pre[0]) + ", " + num(pre[1]) + ")";
    });
    for (int rep = 0; rep < 5; ++rep) {
      const auto a = random_unit(rng, 16), b = random_unit(rng, 16);
      const auto mixed = momentum_blend(a, b, alpha);
      bool exact = mixed.size() == 16;
      for (std::size_t i = 0; exact && i < 16; ++i) exact = mixed[i] == alpha * a[i] + (1.0 - alpha) * b[i];
      rec.check(exact, [&] { return "blend alpha " + num(alpha) + " differs from the weighted sum"; });
    }
  }
  {
    auto m = memory_of({{1.0, 0.0}}, 0.2);
    const std::vector<double> q{0.0, 1.0};
    momentum_update(m, 0, q);
    const double x = m.centroid(0)[0], y = m.centroid(0)[1];
    rec.check(std::abs(x - 0.2 / std::sqrt(0.68)) < 1e-12 && std::abs(y - 0.8 / std::sqrt(0.68)) < 1e-12 &&
                  std::abs(x - 0.2425) < 1e-4 && std::abs(y - 0.9701) < 1e-4 && m.iteration == 1,
              [&] { return "update alpha 0.2: got (" + num(x) + ", " + num(y) + ")"; });
  }
  for (double alpha : {0.0, 1.0}) {
    const auto phi = random_unit(rng, 6), q = random_unit(rng, 6);
    auto m = memory_of({phi}, alpha);
    momentum_update(m, 0, q);
    const auto& target = alpha == 1.0 ? phi : q;
    double gap = 0.0;
    for (std::size_t i = 0; i < 6; ++i) gap = std::max(gap, std::abs(m.centroid(0)[i] - target[i]));
    rec.check(gap < 1e-15, [&] { return "update alpha " + num(alpha) + ": off by " + num(gap); });
  }
  {
    std::vector<std::vector<double>> rows;
    for (int k = 0; k < 10; ++k) rows.push_back(random_unit(rng, 12));
    auto m = memory_of(rows, 0.3);
    for (int step = 0; step < 10000; ++step) {
      m.momentum = rng.uniform();
      momentum_update(m, rng.below(10), random_unit(rng, 12));
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < m.count; ++k) {
      double ss = 0.0;
      for (double v : m.centroid(k)) ss += v * v;
      worst = std::max(worst, std::abs(std::sqrt(ss) - 1.0));
    }
    rec.check(worst < 1e-6 && m.iteration == 10000,
              [&] { return "norm drift after 10000 updates: " + num(worst); });
  }
  return rec.finish();
}

SuiteReport contrastive_suite() {
  Recorder rec("contrastive");
  {
    auto m = memory_of({{0.6, 0.8}});
    const std::vector<std::size_t> pos{0};
    const double loss = contrastive_loss(Tensor({2}, {1.0, 0.0}), m, pos, 0.05).item();
    rec.check(loss == 0.0, [&] { return "single cluster: loss " + num(loss) + ", want 0"; });
  }
  for (std::size_t k : {2u, 8u, 64u}) {
    // Centroids all orthogonal to the query give equal similarities.
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> v(k + 1, 0.0);
      v[i + 1] = 1.0;
      rows.push_back(v);
    }
    auto m = memory_of(rows);
    std::vector<double> q(k + 1, 0.0);
    q[0] = 1.0;
    for (double tau : {0.05, 0.5, 1.0}) {
      for (std::size_t positive : {std::size_t{0}, k - 1}) {
        const std::vector<std::size_t> pos{positive};
        const double loss = contrastive_loss(Tensor({k + 1}, q), m, pos, tau).item();
        rec.check(std::abs(loss - std::log(static_cast<double>(k))) < 1e-9, [&] {
          return "equal similarities K " + std::to_string(k) + " tau " + num(tau) + ": loss " + num(loss);
        });
      }
    }
  }
  {
    auto m = memory_of({{1.0, 0.0}, {0.0, 1.0}});
    const std::vector<std::size_t> pos{0};
    const double loss = contrastive_loss(Tensor({2}, {1.0, 0.0}), m, pos, 1.0).item();
    rec.check(std::abs(loss - std::log(1.0 + std::exp(-1.0))) < 1e-9 && std::abs(loss - 0.3133) < 1e-4,
              [&] { return "single negative: loss " + num(loss) + ", want 0.3133"; });
  }
  return rec.finish();
}

SuiteReport metric_suite(std::uint64_t seed, std::size_t instances) {
  Recorder rec("metrics");
  Rng rng(derive_seed(seed, "metrics"));
  for (std::size_t trial = 0; trial < instances; ++trial) {
    const std::size_t queries = 1 + rng.below(8), gallery = 2 + rng.below(14);
    std::vector<std::vector<std::size_t>> orders;
    Relevance rel;
    for (std::size_t q = 0; q < queries; ++q) {
      std::vector<std::size_t> o(gallery);
      std::iota(o.begin(), o.end(), 0);
      rng.shuffle(std::span<std::size_t>(o));
      orders.push_back(o);
      std::vector<bool> row(gallery, false);
      const std::size_t hits = 1 + rng.below(std::min<std::size_t>(4, gallery));
      for (std::size_t h = 0; h < hits; ++h) row[rng.below(gallery)] = true;
      rel.push_back(row);
    }
    const auto result = result_with(orders);
    const std::string label = "instance " + std::to_string(trial);
    bool recall_ok = true;
    for (std::size_t k = 1; k <= gallery; ++k) {
      recall_ok = recall_ok && recall_at_k(result, rel, k) == oracle::enumerated_recall(orders, rel, k);
    }
    rec.check(recall_ok, [&] { return label + ": recall@K differs from enumeration"; });
    const auto ap = average_precision(result, rel);
    double worst = 0.0;
    for (std::size_t q = 0; q < queries; ++q) {
      worst = std::max(worst, std::abs(ap.per_query[q] - oracle::enumerated_ap(orders[q], rel[q])));
    }
    rec.check(worst < 1e-12 && ap.mean > 0.0 && ap.mean <= 1.0,
              [&] { return label + ": AP off by " + num(worst) + " (mean " + num(ap.mean) + ")"; });
  }
  auto ap_of = [](std::size_t gallery, std::vector<std::size_t> items) {
    std::vector<bool> row(gallery, false);
    for (auto i : items) row[i] = true;
    std::vector<std::size_t> order(gallery);
    std::iota(order.begin(), order.end(), 0);
    return average_precision(result_with({order}), Relevance{row}).mean;
  };
  for (std::size_t r = 1; r <= 5; ++r) {
    const double got = ap_of(6, {r - 1});
    rec.check(got == 1.0 / static_cast<double>(r),
              [&] { return "single match at rank " + std::to_string(r) + ": AP " + num(got); });
  }
  {
    const double got = ap_of(4, {0, 2});
    rec.check(got == (1.0 + 2.0 / 3.0) / 2.0 && std::abs(got - 0.8333) < 1e-4,
              [&] { return "matches at ranks 1 and 3: AP " + num(got) + ", want 0.8333"; });
  }
  return rec.finish();
}

SuiteReport overlap_suite(std::uint64_t seed) {
  Recorder rec("overlap");
  Rng rng(derive_seed(seed, "overlap"));
  {
    std::vector<double> pos(50, 1.0), neg(70, -1.0);
    const double got = similarity_overlap(pos, neg).overlap;
    rec.check(got == 0.0, [&] { return "disjoint samples: overlap " + num(got); });
  }
  {
    std::vector<double> xs(1000);
    for (double& x : xs) x = std::clamp(0.3 * rng.normal(), -1.0, 1.0);
    const double got = similarity_overlap(xs, xs).overlap;
    rec.check(std::abs(got - 1.0) < 0.01, [&] { return "identical samples: overlap " + num(got); });
  }
  {
    // Independent draws from one distribution; histogram noise stays well under 0.01.
    std::vector<double> a(1000000), b(1000000);
    for (double& x : a) x = std::clamp(0.1 + 0.2 * rng.normal(), -1.0, 1.0);
    for (double& x : b) x = std::clamp(0.1 + 0.2 * rng.normal(), -1.0, 1.0);
    const double got = similarity_overlap(a, b).overlap;
    rec.check(std::abs(got - 1.0) < 0.01, [&] { return "same distribution: overlap " + num(got); });
  }
  struct Pair {
    double mp, mn, sp, sn;
  };
  for (const Pair& g : {Pair{0.35, -0.05, 0.15, 0.15}, Pair{0.6, 0.0, 0.1, 0.2}, Pair{0.2, 0.1, 0.12, 0.12},
                        Pair{0.7, -0.3, 0.1, 0.1}}) {
    std::vector<double> pos(10000), neg(10000);
    for (double& x : pos) x = g.mp + g.sp * rng.normal();
    for (double& x : neg) x = g.mn + g.sn * rng.normal();
    const double want = oracle::overlap_integral([&](double x) { return gaussian_pdf(x, g.mp, g.sp); },
                                                 [&](double x) { return gaussian_pdf(x, g.mn, g.sn); }, -1.0, 1.0);
    const double got = similarity_overlap(pos, neg).overlap;
    rec.check(std::abs(got - want) < 0.02, [&] {
      return "gaussians " + num(g.mp) + "/" + num(g.mn) + ": overlap " + num(got) + ", integral " + num(want);
    });
  }
  return rec.finish();
}

std::vector<SuiteReport> run_selfcheck(std::uint64_t seed) {
  return {gradient_suite(seed), dbscan_suite(seed), memory_suite(seed),
          contrastive_suite(),  metric_suite(seed), overlap_suite(seed)};
}

std::string format_report(const SuiteReport& report) {
  std::ostringstream out;
  out << (report.passed() ? "PASS " : "FAIL ") << report.name << ": " << report.trials << " trials, "
      << report.failures.size() << " failed, " << num(report.seconds) << " s";
  constexpr std::size_t kShown = 10;
  for (std::size_t i = 0; i < std::min(kShown, report.failures.size()); ++i) out << "\n  " << report.failures[i];
  if (report.failures.size() > kShown) out << "\n  ... " << report.failures.size() - kShown << " more";
  return out.str();
}

}  // namespace cdikt
