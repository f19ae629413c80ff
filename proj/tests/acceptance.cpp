// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "cli_util.hpp"
#include "oracles.hpp"
#include "voxnas/embedding.hpp"
#include "voxnas/evaluation.hpp"
#include "voxnas/io.hpp"
#include "voxnas/ops.hpp"
#include "voxnas/pipeline.hpp"
#include "voxnas/search.hpp"
#include "voxnas/selector.hpp"
#include "voxnas/supernet.hpp"

using namespace voxnas;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects failure notes for one criterion.
struct Check {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

int failed = 0;

void criterion(const std::string& name, const std::function<std::string(Check&)>& body) {
  Check c;
  std::string detail;
  try {
    detail = body(c);
  } catch (const std::exception& e) {
    c.failures.push_back(std::string("exception: ") + e.what());
  }
  if (c.failures.empty()) {
    std::printf("PASS  %-28s %s\n", name.c_str(), detail.c_str());
  } else {
    ++failed;
    std::printf("FAIL  %-28s %s\n", name.c_str(), c.failures.front().c_str());
    for (std::size_t i = 1; i < c.failures.size() && i < 5; ++i) std::printf("      %s\n", c.failures[i].c_str());
  }
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

SelectionProblem random_problem(std::mt19937_64& rng, Index groups, Index models) {
  std::uniform_real_distribution<double> u(0, 1);
  SelectionProblem p;
  p.group_sizes.resize(groups);
  p.runtimes.resize(models);
  p.acc.resize(groups, models);
  p.std.resize(groups, models);
  for (Index i = 0; i < groups; ++i) {
    p.group_ids.push_back("G" + std::to_string(i + 1));
    p.group_sizes[i] = 1 + std::floor(100 * u(rng));
  }
  for (Index j = 0; j < models; ++j) {
    p.model_ids.push_back("m" + std::to_string(j));
    p.runtimes[j] = 60 * u(rng);
  }
  for (Index k = 0; k < p.acc.size(); ++k) {
    p.acc.data()[k] = std::round(100 * u(rng)) / 100;
    p.std.data()[k] = 0.25 * u(rng);
  }
  return p;
}

oracle::Choice reference(const SelectionProblem& p, double w1, double w2) {
  std::vector<double> sizes(p.group_sizes.data(), p.group_sizes.data() + p.group_sizes.size());
  std::vector<double> rt(p.runtimes.data(), p.runtimes.data() + p.runtimes.size());
  return oracle::enumerate(sizes, p.acc, p.std, rt, p.budget, w1, w2);
}

LevelClustering clustering(VoxelAxis axis, std::vector<Index> assignment) {
  LevelClustering c;
  c.axis = axis;
  c.cluster_count = *std::max_element(assignment.begin(), assignment.end()) + 1;
  c.assignment = std::move(assignment);
  return c;
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

Eigen::VectorXd flat(const Tensor& t) { return Eigen::Map<const Eigen::VectorXd>(t.data(), t.size()); }

// Analytic gradient of `loss(params)` w.r.t. params[k], against central
// differences from the oracle. Returns the worst relative error.
double grad_error(const std::function<ag::Var(const std::vector<ag::Var>&)>& loss, std::vector<Tensor> values,
                  double eps) {
  std::vector<ag::Var> params;
  for (const auto& v : values) params.push_back(ag::parameter(v));
  ag::backward(loss(params));
  double worst = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const Eigen::VectorXd analytic =
        params[k]->has_grad() ? flat(params[k]->grad) : Eigen::VectorXd::Zero(values[k].size());
    auto f = [&](const Eigen::VectorXd& x) {
      ag::NoGradGuard g;
      std::vector<ag::Var> ps;
      for (std::size_t m = 0; m < values.size(); ++m) {
        ps.push_back(ag::constant(m == k ? Tensor(values[k].shape(), x.array()) : values[m]));
      }
      return loss(ps)->value[0];
    };
    const Eigen::VectorXd numeric = oracle::numeric_gradient(f, flat(values[k]), eps);
    worst = std::max(worst, oracle::max_relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace

int main() {
  std::mt19937_64 rng(20240611);
  const fs::path scratch = fs::temp_directory_path() / ("voxnas_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  criterion("table7_selection", [&](Check& c) {
    const auto p =
        SelectionProblem::from_json(nlohmann::json::parse(io::read_text(VOXNAS_FIXTURE_DIR "/table7_selection.json")));
    const auto t0 = Clock::now();
    const auto r = solve_selection(p);
    const double secs = seconds_since(t0);
    std::vector<std::string> chosen;
    for (Index j : r.assignment) chosen.push_back(p.model_ids[static_cast<std::size_t>(j)]);
    c.expect(chosen == std::vector<std::string>{"tab2vox", "xgboost", "dt", "lasso"}, "wrong models");
    c.expect(std::abs(r.objective - 0.6555) <= 0.0015, fmt("objective %.6f", r.objective));
    c.expect(secs < 1.0, fmt("took %.3f s", secs));
    return fmt("objective=%.6f time=%.2e s", r.objective, secs);
  });

  criterion("unbounded_budget_argmax", [&](Check& c) {
    for (int t = 0; t < 100; ++t) {
      const auto p = random_problem(rng, 1 + t % 6, 1 + (t * 7) % 9);
      const auto r = solve_selection(p);
      for (Index i = 0; i < p.group_count(); ++i) {
        Index best = 0;
        for (Index j = 1; j < p.model_count(); ++j)
          if (p.acc(i, j) > p.acc(i, best)) best = j;
        c.expect(r.assignment[static_cast<std::size_t>(i)] == best, "instance " + std::to_string(t));
      }
    }
    return std::string("100 instances");
  });

  criterion("candidate_space_count", [&](Check& c) {
    std::array<LevelClustering, 3> cl{clustering(VoxelAxis::feature, {0, 1, 2, 3, 4}),
                                      clustering(VoxelAxis::base, {0, 1, 2}),
                                      clustering(VoxelAxis::equipment, {0, 1})};
    const auto joint = enumerate_candidates(cl, MappingMode::joint);
    const auto fact = enumerate_candidates(cl, MappingMode::factorized);
    c.expect(joint.joint_size() == 1440, "joint size " + std::to_string(joint.joint_size()));
    c.expect(joint.joint_size() == oracle::factorial(5) * oracle::factorial(3) * oracle::factorial(2), "factorial");
    c.expect(fact.parameter_count() == 128, "factorized count " + std::to_string(fact.parameter_count()));
    return "joint=" + std::to_string(joint.joint_size()) + " factorized=" + std::to_string(fact.parameter_count());
  });

  criterion("metric_suite", [&](Check& c) {
    auto v = [](std::vector<double> x) { return x; };
    auto near = [&](double got, double want, const std::string& what) {
      c.expect(std::abs(got - want) <= 1e-9, what + ": " + std::to_string(got));
    };
    auto R = [](const std::vector<double>& a, const std::vector<double>& f) { return rmse(as_vector(a), as_vector(f)); };
    auto M = [](const std::vector<double>& a, const std::vector<double>& f) { return mae(as_vector(a), as_vector(f)); };
    auto A = [](const std::vector<double>& a, const std::vector<double>& f) {
      return minmax_accuracy(as_vector(a), as_vector(f));
    };
    near(R(v({1, 2}), v({1, 2})), 0, "rmse equal");
    near(R(v({0, 0}), v({3, 4})), std::sqrt(25.0 / 2), "rmse (3,4)");
    near(R(v({1}), v({4})), 3, "rmse single");
    near(M(v({1, 2}), v({1, 2})), 0, "mae equal");
    near(M(v({0, 0}), v({1, -1})), 1, "mae (1,-1)");
    near(M(v({0, 0}), v({3, 4})), 3.5, "mae (3,4)");
    near(A(v({5, 5}), v({5, 5})), 1, "minmax equal");
    near(A(v({2, 8}), v({4, 4})), 0.5, "minmax (2,8)");
    near(A(v({0}), v({0})), 1, "minmax zeros");
    int dominated = 0;
    double worst_scale = 0;
    for (int t = 0; t < 1000; ++t) {
      const std::size_t n = 1 + static_cast<std::size_t>(t % 25);
      auto a = oracle::random_vector(rng, n, 0, 50), f = oracle::random_vector(rng, n, 0, 50);
      if (t % 4 == 0) a[0] = f[0] = 0;
      if (R(a, f) >= M(a, f)) ++dominated;
      near(R(a, f), oracle::rmse(a, f), "rmse oracle");
      near(M(a, f), oracle::mae(a, f), "mae oracle");
      near(A(a, f), oracle::minmax(a, f), "minmax oracle");
      for (double lambda : {0.5, 3.0}) {
        std::vector<double> la = a, lf = f;
        for (auto& x : la) x *= lambda;
        for (auto& x : lf) x *= lambda;
        worst_scale = std::max(worst_scale, std::abs(A(la, lf) - A(a, f)));
      }
    }
    c.expect(dominated == 1000, "rmse < mae on some vector");
    c.expect(worst_scale <= 1e-12, fmt("scale deviation %.3e", worst_scale));
    return fmt("rmse>=mae on %.0f/1000, max scale deviation %.1e", dominated, worst_scale);
  });

  criterion("embedding_suite", [&](Check& c) {
    std::array<LevelClustering, 3> cl{clustering(VoxelAxis::feature, {0, 0, 1, 2, 2}),
                                      clustering(VoxelAxis::base, {0, 1, 1}),
                                      clustering(VoxelAxis::equipment, {0, 1})};
    const Tensor raw = random_tensor({3, 5, 3, 2}, rng);
    double worst_sum = 0, worst_shift = 0;
    for (auto mode : {MappingMode::factorized, MappingMode::joint}) {
      const auto space = enumerate_candidates(cl, mode);
      for (int t = 0; t < 20; ++t) {
        auto p = EmbeddingParams::zeros(space);
        for (auto& l : p.logits) {
          const auto r = oracle::random_vector(rng, static_cast<std::size_t>(l.size()), -3, 3);
          l = Eigen::Map<const Eigen::VectorXd>(r.data(), l.size());
          const auto s = ag::softmax(ag::constant(Tensor({l.size()}, l.array())));
          worst_sum = std::max(worst_sum, std::abs(s->value.array().sum() - 1.0));
          c.expect((s->value.array() > 0).all(), "non-positive weight");
        }
        auto shifted = p;
        for (auto& l : shifted.logits) l.array() += 7.0 + t;
        const auto a = mixed_embed(raw, space, p), b = mixed_embed(raw, space, shifted);
        worst_shift = std::max(worst_shift, (a.array() - b.array()).abs().maxCoeff());
        c.expect(derive_embedding(space, p) == derive_embedding(space, shifted), "argmax moved under shift");
      }
    }
    c.expect(worst_sum <= 1e-12, fmt("softmax sum off by %.3e", worst_sum));
    c.expect(worst_shift <= 1e-9, fmt("shift changed output by %.3e", worst_shift));

    // one-hot factorized mixture vs voxelize, every order triple
    const auto space = enumerate_candidates(cl, MappingMode::factorized);
    int exact = 0, total = 0;
    for (Index f = 0; f < space.axis_size(VoxelAxis::feature); ++f)
      for (Index b = 0; b < space.axis_size(VoxelAxis::base); ++b)
        for (Index e = 0; e < space.axis_size(VoxelAxis::equipment); ++e) {
          auto p = EmbeddingParams::zeros(space);
          const Index pick[3] = {f, b, e};
          ClusterOrders orders;
          for (std::size_t a = 0; a < 3; ++a) {
            p.logits[a].setConstant(-1e4);
            p.logits[a][pick[a]] = 0;
            orders[a] = space.orders(kVoxelAxes[a])[static_cast<std::size_t>(pick[a])];
          }
          ++total;
          if (mixed_embed(raw, space, p) == voxelize(raw, space, orders)) ++exact;
        }
    c.expect(exact == total, "one-hot mismatch");

    // block permutation: explicit index oracle
    const auto swapped = voxelize(raw, space, {std::vector<Index>{2, 0, 1}, {1, 0}, {1, 0}});
    const Index fmap[5] = {3, 4, 0, 1, 2}, bmap[3] = {1, 2, 0}, emap[2] = {1, 0};
    bool perm_ok = true;
    for (Index y = 0; y < 3; ++y)
      for (Index f = 0; f < 5; ++f)
        for (Index b = 0; b < 3; ++b)
          for (Index e = 0; e < 2; ++e) perm_ok &= swapped(y, f, b, e) == raw(y, fmap[f], bmap[b], emap[e]);
    c.expect(perm_ok, "block permutation mismatch");
    return fmt("sum err %.1e, shift err %.1e, one-hot exact on %.0f triples", worst_sum, worst_shift, total);
  });

  criterion("gradient_suite", [&](Check& c) {
    const auto t0 = Clock::now();
    const double eps = 1e-3;
    const Shape shape{2, 3, 4, 3, 2};
    const Tensor x = random_tensor(shape, rng);

    // mixed_embed logits: (N, years, features, bases, equipment) = shape
    std::array<LevelClustering, 3> cl{clustering(VoxelAxis::feature, {0, 1, 1, 2}),
                                      clustering(VoxelAxis::base, {0, 1, 2}), clustering(VoxelAxis::equipment, {0, 1})};
    double embed_err = 0;
    for (auto mode : {MappingMode::factorized, MappingMode::joint}) {
      const auto space = enumerate_candidates(cl, mode);
      const Tensor coeff = random_tensor(shape, rng);
      std::vector<Tensor> logits;
      for (const auto& l : EmbeddingParams::zeros(space).logits) {
        logits.push_back(random_tensor({l.size()}, rng));
      }
      embed_err = std::max(embed_err, grad_error(
                                          [&](const std::vector<ag::Var>& ps) {
                                            return ag::dot_constant(mixed_embed(ag::constant(x), space, ps), coeff);
                                          },
                                          logits, eps));
    }

    // mixed-op logits, both strides
    double op_err = 0;
    for (Index stride : {1, 2}) {
      Rng wrng(7 + static_cast<std::uint64_t>(stride));
      MixedOp m(all_op_kinds(), 3, stride, wrng);
      const Tensor coeff = random_tensor(stride_output_shape(shape, stride), rng);
      op_err = std::max(op_err, grad_error(
                                    [&](const std::vector<ag::Var>& ps) {
                                      return ag::dot_constant(m.forward(ag::constant(x), ag::softmax(ps[0]), true),
                                                              coeff);
                                    },
                                    {random_tensor({11}, rng)}, eps));
    }

    // convolution weights: a bare strided conv and a full relu-conv-norm stage
    double conv_err = 0;
    {
      ag::Conv3dOptions opt;
      opt.stride = 2;
      opt.padding = {1, 1, 1};
      const Tensor w = random_tensor({4, 3, 3, 3, 3}, rng);
      const Tensor probe = ag::conv3d(ag::constant(x), ag::constant(w), opt)->value;
      const Tensor coeff = random_tensor(probe.shape(), rng);
      conv_err = grad_error(
          [&](const std::vector<ag::Var>& ps) { return ag::dot_constant(ag::conv3d(ag::constant(x), ps[0], opt), coeff); },
          {w}, eps);

      ag::Conv3dOptions dil;
      dil.padding = {2, 2, 2};
      dil.dilation = 2;
      dil.groups = 3;
      const Tensor wd = random_tensor({3, 1, 3, 3, 3}, rng);
      const Tensor cd = random_tensor(shape, rng);
      conv_err = std::max(conv_err, grad_error(
                                        [&](const std::vector<ag::Var>& ps) {
                                          return ag::dot_constant(ag::conv3d(ag::constant(x), ps[0], dil), cd);
                                        },
                                        {wd}, eps));

      // weights living inside a relu-conv-norm primitive
      Rng prng(3);
      Primitive prim(OpKind::conv_3x3x3, 3, 1, prng);
      ModuleState ms;
      prim.collect(ms);
      const ag::Var leaf = ms.weights.at(0);
      const Tensor w0 = leaf->value;
      const Tensor cp = random_tensor(shape, rng);
      leaf->zero_grad();
      ag::backward(ag::dot_constant(prim.forward_dense(ag::constant(x), true), cp));
      const Eigen::VectorXd analytic = flat(leaf->grad);
      auto f = [&](const Eigen::VectorXd& w) {
        ag::NoGradGuard g;
        leaf->value = Tensor(w0.shape(), w.array());
        return ag::dot_constant(prim.forward_dense(ag::constant(x), true), cp)->value[0];
      };
      const Eigen::VectorXd numeric = oracle::numeric_gradient(f, flat(w0), eps);
      leaf->value = w0;
      conv_err = std::max(conv_err, oracle::max_relative_error(analytic, numeric));
    }
    const double secs = seconds_since(t0);
    c.expect(embed_err < 1e-4, fmt("mixed_embed error %.3e", embed_err));
    c.expect(op_err < 1e-4, fmt("mixed-op error %.3e", op_err));
    c.expect(conv_err < 1e-4, fmt("convolution error %.3e", conv_err));
    c.expect(secs < 60, fmt("took %.1f s", secs));
    return fmt("embed %.1e, op %.1e, conv %.1e", embed_err, op_err, conv_err) + fmt(" in %.1f s", secs);
  });

  criterion("supernet_shape_suite", [&](Check& c) {
    int checked = 0;
    for (const Shape& shape : {Shape{2, 3, 4, 3, 2}, Shape{1, 2, 5, 1, 3}, Shape{3, 4, 7, 6, 5}}) {
      const auto x = ag::constant(random_tensor(shape, rng));
      for (OpKind k : all_op_kinds()) {
        for (Index stride : {1, 2}) {
          Rng prng(static_cast<std::uint64_t>(k) * 3 + static_cast<std::uint64_t>(stride));
          Primitive p(k, shape[1], stride, prng);
          Shape want = shape;
          for (std::size_t a = 2; a < 5; ++a) want[a] = (shape[a] + stride - 1) / stride;
          const auto y = p.forward_dense(x, true);
          c.expect(y->value.shape() == want, op_name(k) + " stride " + std::to_string(stride) + " gave " +
                                                 shape_string(y->value.shape()));
          ++checked;
        }
      }
    }
    std::normal_distribution<double> nd(0, 2);
    for (int t = 0; t < 200; ++t) {
      const Index nodes = 1 + t % 4;
      Eigen::MatrixXd a(nodes * (nodes + 3) / 2, 11);
      for (Index i = 0; i < a.size(); ++i) a.data()[i] = nd(rng);
      if (t % 5 == 0) a.setZero();
      const auto g = derive_cell(a, all_op_kinds(), nodes);
      c.expect(static_cast<Index>(g.nodes.size()) == nodes, "node count");
      for (Index i = 0; i < nodes; ++i) {
        const auto& node = g.nodes[static_cast<std::size_t>(i)];
        c.expect(node.size() == 2 && node[0].first != node[1].first, "node inputs");
        for (const auto& [pred, op] : node) {
          c.expect(op != OpKind::none, "none in genotype");
          c.expect(pred >= 0 && pred < i + 2, "input from a later node");
        }
      }
    }
    return std::to_string(checked) + " op/stride/shape cases, 200 genotypes";
  });

  criterion("selection_oracle_equivalence", [&](Check& c) {
    std::uniform_real_distribution<double> u(0, 1);
    int feasible = 0;
    for (int t = 0; t < 100; ++t) {
      auto p = random_problem(rng, 1 + t % 5, 1 + (t / 5) % 6);
      p.budget = t % 10 == 0 ? std::numeric_limits<double>::infinity() : 60 * u(rng);
      const double w1 = u(rng), w2 = u(rng);
      const auto ref1 = reference(p, 1, 0), ref2 = reference(p, w1, w2);
      if (!ref1.feasible) {
        bool threw = false;
        try {
          solve_selection(p);
        } catch (const Infeasible&) {
          threw = true;
        }
        c.expect(threw, "missed infeasibility");
        continue;
      }
      ++feasible;
      const auto a = solve_selection(p), o = brute_force_oracle(p);
      const auto b = solve_selection_robust(p, w1, w2), ob = brute_force_oracle(p, w1, w2);
      c.expect(std::vector<long>(a.assignment.begin(), a.assignment.end()) == ref1.assignment, "plain assignment");
      c.expect(a.objective == ref1.objective && o.objective == a.objective && o.assignment == a.assignment,
               "plain objective");
      c.expect(std::vector<long>(b.assignment.begin(), b.assignment.end()) == ref2.assignment, "robust assignment");
      c.expect(b.objective == ref2.objective && ob.assignment == b.assignment, "robust objective");
      c.expect(a.runtime <= p.budget + 1e-12 && b.runtime <= p.budget + 1e-12, "budget violated");
    }
    int monotone = 0;
    for (int t = 0; t < 30; ++t) {
      auto p = random_problem(rng, 4, 5);
      double last = -std::numeric_limits<double>::infinity();
      bool ok = true;
      for (double T = 0; T <= 64; T += 2) {
        p.budget = T;
        try {
          const double obj = solve_selection_robust(p, 0.7, 0.3).objective;
          ok &= obj >= last;
          last = obj;
        } catch (const Infeasible&) {
          ok &= std::isinf(last);
        }
      }
      monotone += ok;
    }
    c.expect(monotone == 30, "budget monotonicity violated");
    return fmt("%.0f feasible of 100, monotone %.0f/30 sweeps", feasible, monotone);
  });

  criterion("end_to_end_smoke", [&](Check& c) {
    RunConfig cfg;
    cfg.synthetic.items = 200;
    cfg.search.epochs = 10;
    cfg.folds = {0};
    cfg.out_dir = (scratch / "e2e").string();
    const auto t0 = Clock::now();
    const auto report = stage_evaluate(cfg);
    const double secs = seconds_since(t0);
    std::ifstream h(fs::path(cfg.out_dir) / "fold_0" / "history.csv");
    double initial = 0;
    const auto hist = read_history_csv(h, &initial);
    double derived = -1, mean = -1;
    for (const auto& m : report.models) {
      if (m.model == kDerivedModelId) derived = m.minmax_mean;
      if (m.model == "arithmetic_mean") mean = m.minmax_mean;
    }
    c.expect(cfg.synthetic.bases == 4 && cfg.synthetic.equipment == 3 && cfg.synthetic.years == 6 &&
                 cfg.synthetic.features == 8,
             "panel geometry");
    c.expect(!hist.empty() && static_cast<Index>(hist.size()) <= 10, "history length");
    c.expect(!hist.empty() && hist.back().val_loss <= initial, fmt("val loss %.4f > initial %.4f",
                                                                    hist.empty() ? 0 : hist.back().val_loss, initial));
    c.expect(derived >= mean && mean >= 0, fmt("derived %.4f < mean baseline %.4f", derived, mean));
    c.expect(secs < 1800, fmt("took %.0f s", secs));
    return fmt("val %.4f -> %.4f, ", initial, hist.empty() ? 0 : hist.back().val_loss) +
           fmt("minmax derived %.4f vs mean %.4f, ", derived, mean) + fmt("%.0f s", secs);
  });

  criterion("determinism", [&](Check& c) {
    const fs::path cfg_path = scratch / "det.json";
    std::ofstream(cfg_path) << R"({
      "seed": 13,
      "synthetic": {"items": 24},
      "supernet": {"cells": 2, "nodes": 2, "width": 4},
      "search": {"epochs": 1, "batch_size": 8},
      "train": {"epochs": 2, "batch_size": 8},
      "folds": [0, 1]
    })";
    const char* stages[] = {"synth", "ingest", "search", "train", "evaluate", "select", "report"};
    std::size_t files = 0;
    for (const char* run : {"a", "b"}) {
      const auto out = scratch / ("det_" + std::string(run));
      for (const char* s : stages) {
        const auto r = cli::run(std::string(s) + " --config " + cfg_path.string() + " --out " + out.string());
        c.expect(r.status == 0, std::string(s) + " exited " + std::to_string(r.status) + ": " + r.err);
      }
    }
    const auto a = cli::tree(scratch / "det_a"), b = cli::tree(scratch / "det_b");
    files = a.size();
    c.expect(!a.empty() && a == b, "output trees differ");
    for (const auto& [name, bytes] : a) {
      const auto it = b.find(name);
      if (it == b.end() || it->second != bytes) c.expect(false, "differs: " + name);
    }
    // a repeated stage in place rewrites identical bytes
    const auto before = cli::tree(scratch / "det_a");
    const auto r = cli::run("select --config " + cfg_path.string() + " --out " + (scratch / "det_a").string());
    c.expect(r.status == 0 && cli::tree(scratch / "det_a") == before, "rerun of select changed files");
    return std::to_string(files) + " files byte-identical across 7 stages";
  });

  fs::remove_all(scratch);
  std::printf("%s: %d failed\n", failed ? "FAIL" : "PASS", failed);
  return failed ? 1 : 0;
}
