#include "pfa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "pfa/losses.hpp"
#include "pfa/ops.hpp"
#include "pfa/pfa_net.hpp"

namespace pfa {

Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double eps) {
    if (eps <= 0.0) {
        throw ConfigError("finite_diff_grad: eps must be positive");
    }
    Tensor<double> g(x.shape);
    Tensor<double> probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x.data[i];
        probe.data[i] = v + eps;
        const double fp = f(probe);
        probe.data[i] = v - eps;
        const double fm = f(probe);
        probe.data[i] = v;
        g.data[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

std::vector<double> finite_diff_grad_at(const std::function<double(const Tensor<double>&)>& f,
                                        const Tensor<double>& x,
                                        const std::vector<std::size_t>& indices, double eps) {
    if (eps <= 0.0) {
        throw ConfigError("finite_diff_grad: eps must be positive");
    }
    std::vector<double> g(indices.size());
    Tensor<double> probe = x;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        const double v = x.data[i];
        probe.data[i] = v + eps;
        const double fp = f(probe);
        probe.data[i] = v - eps;
        const double fm = f(probe);
        probe.data[i] = v;
        g[k] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric,
                   double floor) {
    if (analytic.size() != numeric.size()) {
        throw Error("max_rel_err: mismatched lengths");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({floor, std::abs(analytic[i]), std::abs(numeric[i])});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

namespace {

using V = Var<double>;
using Tn = Tensor<double>;

// One differentiable test case: a scalar-valued builder over a fixed set of
// input tensors. The same builder serves the analytic pass (leaves with
// gradients) and the numeric oracle (plain forward evaluations).
struct Case {
    std::function<V(const std::vector<V>&)> build;
    std::vector<Tn> inputs;
    std::vector<bool> checked;  // which inputs to differentiate against
    double eps = 1e-6;
};

double run_case(const Case& c, double floor = 1e-3) {
    std::vector<V> vars;
    vars.reserve(c.inputs.size());
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        vars.push_back(leaf(c.inputs[i], c.checked[i]));
    }
    V loss = c.build(vars);
    backward(loss);

    double worst = 0.0;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        if (!c.checked[i]) continue;
        Tn analytic = vars[i]->grad.numel() ? vars[i]->grad : Tn(c.inputs[i].shape);
        auto f = [&](const Tn& x) {
            std::vector<V> fw;
            fw.reserve(c.inputs.size());
            for (std::size_t j = 0; j < c.inputs.size(); ++j) {
                fw.push_back(constant(j == i ? x : c.inputs[j]));
            }
            return c.build(fw)->value.data[0];
        };
        Tn numeric = finite_diff_grad(f, c.inputs[i], c.eps);
        worst = std::max(worst, max_rel_err(analytic.data, numeric.data, floor));
    }
    return worst;
}

// Non-uniform upstream gradient: project through a fixed random gate map so
// spatial routing mistakes cannot cancel.
V project(const V& x, const Tn& gate) {
    return reduce_sum(broadcast_mul(x, constant(gate)));
}

Tn rand_t(Rng& rng, Shape shape, double lo, double hi) {
    return random_uniform<double>(rng, std::move(shape), lo, hi);
}

// Magnitudes bounded away from zero: safe for relu/abs kinks under 1e-6 probes.
Tn rand_signed(Rng& rng, Shape shape) {
    Tn t(std::move(shape));
    for (auto& v : t.data) {
        const double mag = rng.uniform(0.2, 1.5);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

Tn rand_binary(Rng& rng, Shape shape) {
    Tn t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return t;
}

// --- per-operator cases -----------------------------------------------------

double check_conv2d(Rng& rng) {
    double worst = 0.0;
    for (int dil : {1, 3, 5, 7}) {
        Case c;
        c.inputs = {rand_t(rng, {1, 2, 8, 8}, -1, 1), rand_t(rng, {3, 2, 3, 3}, -1, 1),
                    rand_t(rng, {3}, -0.5, 0.5)};
        c.checked = {true, true, true};
        c.build = [dil](const std::vector<V>& in) {
            return reduce_sum(conv2d(in[0], in[1], in[2], 1, dil, Padding::kSame));
        };
        worst = std::max(worst, run_case(c));
    }
    {
        // single-channel, spatially projected: catches flipped-kernel errors
        Case c;
        Tn gate = rand_t(rng, {1, 1, 8, 8}, -1, 1);
        c.inputs = {rand_t(rng, {1, 1, 8, 8}, -1, 1), rand_t(rng, {1, 1, 3, 3}, -1, 1),
                    rand_t(rng, {1}, -0.5, 0.5)};
        c.checked = {true, true, true};
        c.build = [gate](const std::vector<V>& in) {
            return project(conv2d(in[0], in[1], in[2], 1, 1, Padding::kSame), gate);
        };
        worst = std::max(worst, run_case(c));
    }
    {
        // strided valid convolution
        Case c;
        c.inputs = {rand_t(rng, {1, 2, 9, 9}, -1, 1), rand_t(rng, {2, 2, 3, 3}, -1, 1),
                    rand_t(rng, {2}, -0.5, 0.5)};
        c.checked = {true, true, true};
        c.build = [](const std::vector<V>& in) {
            return reduce_sum(conv2d(in[0], in[1], in[2], 2, 1, Padding::kValid));
        };
        worst = std::max(worst, run_case(c));
    }
    return worst;
}

double check_unary(Rng& rng, Unary kind) {
    Case c;
    Tn gate = rand_t(rng, {1, 1, 6, 6}, -1, 1);
    c.inputs = {kind == Unary::kSigmoid || kind == Unary::kTanh ? rand_t(rng, {1, 1, 6, 6}, -2, 2)
                                                                : rand_signed(rng, {1, 1, 6, 6})};
    c.checked = {true};
    c.build = [kind, gate](const std::vector<V>& in) {
        return project(pointwise(kind, in[0]), gate);
    };
    return run_case(c);
}

double check_relu(Rng& rng) { return check_unary(rng, Unary::kRelu); }
double check_sigmoid(Rng& rng) { return check_unary(rng, Unary::kSigmoid); }
double check_tanh(Rng& rng) { return check_unary(rng, Unary::kTanh); }
double check_abs(Rng& rng) { return check_unary(rng, Unary::kAbs); }

double check_max_pool(Rng& rng) {
    Case c;
    Tn gate = rand_t(rng, {1, 1, 3, 3}, -1, 1);
    c.inputs = {rand_t(rng, {1, 2, 6, 6}, -1, 1)};
    c.checked = {true};
    c.build = [gate](const std::vector<V>& in) { return project(max_pool2d(in[0]), gate); };
    return run_case(c);
}

double check_gap(Rng& rng) {
    Case c;
    c.inputs = {rand_t(rng, {2, 3, 4, 4}, -1, 1), rand_t(rng, {1, 3}, -1, 1),
                rand_t(rng, {1}, -0.5, 0.5)};
    c.checked = {true, false, false};
    c.build = [](const std::vector<V>& in) {
        return reduce_sum(dense(global_avg_pool(in[0]), in[1], in[2]));
    };
    return run_case(c);
}

double check_dense(Rng& rng) {
    Case c;
    c.inputs = {rand_t(rng, {2, 3}, -1, 1), rand_t(rng, {4, 3}, -1, 1), rand_t(rng, {4}, -0.5, 0.5),
                rand_t(rng, {1, 4}, -1, 1), rand_t(rng, {1}, -0.5, 0.5)};
    c.checked = {true, true, true, false, false};
    c.build = [](const std::vector<V>& in) {
        return reduce_sum(dense(dense(in[0], in[1], in[2]), in[3], in[4]));
    };
    return run_case(c);
}

double check_concat(Rng& rng) {
    Case c;
    Tn gate = rand_t(rng, {1, 1, 5, 5}, -1, 1);
    c.inputs = {rand_t(rng, {1, 2, 5, 5}, -1, 1), rand_t(rng, {1, 3, 5, 5}, -1, 1)};
    c.checked = {true, true};
    c.build = [gate](const std::vector<V>& in) {
        return project(concat_channels<double>({in[0], in[1]}), gate);
    };
    return run_case(c);
}

double check_upsample(Rng& rng) {
    double worst = 0.0;
    for (int factor : {2, 3, 4}) {
        Case c;
        Tn gate = rand_t(rng, {1, 1, 4 * factor, 4 * factor}, -1, 1);
        c.inputs = {rand_t(rng, {1, 2, 4, 4}, -1, 1)};
        c.checked = {true};
        c.build = [factor, gate](const std::vector<V>& in) {
            return project(bilinear_upsample(in[0], factor), gate);
        };
        worst = std::max(worst, run_case(c));
    }
    return worst;
}

double check_broadcast_mul(Rng& rng) {
    double worst = 0.0;
    {
        Case c;
        Tn gate = rand_t(rng, {2, 1, 4, 4}, -1, 1);
        c.inputs = {rand_t(rng, {2, 3, 4, 4}, -1, 1), rand_t(rng, {2, 3}, -1, 1)};
        c.checked = {true, true};
        c.build = [gate](const std::vector<V>& in) {
            return project(broadcast_mul(in[0], in[1]), gate);
        };
        worst = std::max(worst, run_case(c));
    }
    {
        Case c;
        Tn gate = rand_t(rng, {2, 1, 4, 4}, -1, 1);
        c.inputs = {rand_t(rng, {2, 3, 4, 4}, -1, 1), rand_t(rng, {2, 1, 4, 4}, -1, 1)};
        c.checked = {true, true};
        c.build = [gate](const std::vector<V>& in) {
            return project(broadcast_mul(in[0], in[1]), gate);
        };
        worst = std::max(worst, run_case(c));
    }
    return worst;
}

double check_reduce(Rng& rng) {
    double worst = 0.0;
    for (bool mean : {false, true}) {
        Case c;
        c.inputs = {rand_t(rng, {2, 3, 4, 4}, -1, 1)};
        c.checked = {true};
        c.build = [mean](const std::vector<V>& in) {
            return mean ? reduce_mean(in[0]) : reduce_sum(in[0]);
        };
        worst = std::max(worst, run_case(c));
    }
    return worst;
}

double check_add_scale(Rng& rng) {
    Case c;
    Tn gate = rand_t(rng, {1, 1, 4, 4}, -1, 1);
    c.inputs = {rand_t(rng, {1, 2, 4, 4}, -1, 1), rand_t(rng, {1, 2, 4, 4}, -1, 1)};
    c.checked = {true, true};
    c.build = [gate](const std::vector<V>& in) {
        return project(add(scale(in[0], 1.7), in[1]), gate);
    };
    return run_case(c);
}

double check_weighted_bce(Rng& rng) {
    double worst = 0.0;
    for (LossMode mode : {LossMode::kSum, LossMode::kMean}) {
        Case c;
        Tn target = rand_binary(rng, {1, 1, 6, 6});
        c.inputs = {rand_t(rng, {1, 1, 6, 6}, 0.1, 0.9)};
        c.checked = {true};
        c.build = [target, mode](const std::vector<V>& in) {
            return weighted_bce(in[0], constant(target), 0.528, 1e-7, mode);
        };
        worst = std::max(worst, run_case(c));
    }
    return worst;
}

// The |.| inside the edge map has a kink at zero Laplacian response; keep the
// probe away from it so central differences stay valid.
Tn rand_map_away_from_laplace_kink(Rng& rng, int h, int w, double margin) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        Tn m = rand_t(rng, {1, 1, h, w}, 0.0, 1.0);
        Tn lap = laplace_edge(constant(m))->value;  // tanh|lap| ~ |lap| near zero
        double lo = 1e9;
        for (double v : lap.data) lo = std::min(lo, v);
        if (lo > margin) return m;
    }
    throw Error("gradcheck: could not sample a Laplacian map away from the kink");
}

double check_laplace_edge(Rng& rng) {
    Case c;
    Tn gate = rand_t(rng, {1, 1, 8, 8}, -1, 1);
    c.inputs = {rand_map_away_from_laplace_kink(rng, 8, 8, 1e-3)};
    c.checked = {true};
    c.build = [gate](const std::vector<V>& in) { return project(laplace_edge(in[0]), gate); };
    return run_case(c);
}

double check_edge_bce(Rng& rng) {
    double worst = 0.0;
    for (LossMode mode : {LossMode::kSum, LossMode::kMean}) {
        Case c;
        Tn target = rand_binary(rng, {1, 1, 8, 8});
        c.inputs = {rand_map_away_from_laplace_kink(rng, 8, 8, 1e-3)};
        c.checked = {true};
        c.build = [target, mode](const std::vector<V>& in) {
            return edge_bce(in[0], constant(target), 1e-7, mode);
        };
        worst = std::max(worst, run_case(c));
    }
    return worst;
}

double check_channel_attention(Rng& rng) {
    ModelParams<double> params;
    Rng init(rng.next_u64());
    auto ca = ChannelAttention<double>::build(8, 4, params, init, "ca");
    Case c;
    Tn gate = rand_t(rng, {1, 1, 4, 4}, -1, 1);
    c.inputs = {rand_t(rng, {1, 8, 4, 4}, -1, 1), ca.fc1_w->value, ca.fc1_b->value,
                ca.fc2_w->value, ca.fc2_b->value};
    c.checked = {true, true, true, true, true};
    c.build = [gate](const std::vector<V>& in) {
        V pooled = global_avg_pool(in[0]);
        V g = sigmoid(dense(relu(dense(pooled, in[1], in[2])), in[3], in[4]));
        return project(broadcast_mul(in[0], g), gate);
    };
    return run_case(c);
}

double check_spatial_attention(Rng& rng) {
    ModelParams<double> params;
    Rng init(rng.next_u64());
    auto sa = SpatialAttention<double>::build(8, 9, params, init, "sa");
    Case c;
    Tn gate = rand_t(rng, {1, 1, 6, 6}, -1, 1);
    c.inputs = {rand_t(rng, {1, 8, 6, 6}, -1, 1), sa.a1_w->value, sa.a1_b->value, sa.a2_w->value,
                sa.a2_b->value, sa.b1_w->value, sa.b1_b->value, sa.b2_w->value, sa.b2_b->value};
    c.checked = std::vector<bool>(9, true);
    c.build = [gate](const std::vector<V>& in) {
        V a = conv2d(conv2d(in[0], in[1], in[2]), in[3], in[4]);
        V b = conv2d(conv2d(in[0], in[5], in[6]), in[7], in[8]);
        return project(sigmoid(add(a, b)), gate);
    };
    return run_case(c);
}

double check_low_level_combine(Rng& rng) {
    ModelParams<double> params;
    Rng init(rng.next_u64());
    auto low = LowLevelCombine<double>::build(3, 4, params, init, "low");
    Case c;
    Tn gate = rand_t(rng, {1, 1, 8, 8}, -1, 1);
    c.inputs = {rand_t(rng, {1, 3, 8, 8}, -1, 1), rand_t(rng, {1, 4, 4, 4}, -1, 1),
                low.w1->value, low.b1->value, low.w2->value, low.b2->value};
    c.checked = {true, true, true, true, true, true};
    c.build = [gate](const std::vector<V>& in) {
        V s1 = relu(conv2d(in[0], in[2], in[3]));
        V s2 = bilinear_upsample(relu(conv2d(in[1], in[4], in[5])), 2);
        return project(concat_channels<double>({s1, s2}), gate);
    };
    return run_case(c);
}

using CheckFn = double (*)(Rng&);

const std::map<std::string, CheckFn>& op_table() {
    static const std::map<std::string, CheckFn> table = {
        {"conv2d", check_conv2d},
        {"relu", check_relu},
        {"sigmoid", check_sigmoid},
        {"tanh", check_tanh},
        {"abs", check_abs},
        {"max_pool2d", check_max_pool},
        {"global_avg_pool", check_gap},
        {"dense", check_dense},
        {"concat_channels", check_concat},
        {"bilinear_upsample", check_upsample},
        {"broadcast_mul", check_broadcast_mul},
        {"reduce", check_reduce},
        {"add_scale", check_add_scale},
        {"weighted_bce", check_weighted_bce},
        {"laplace_edge", check_laplace_edge},
        {"edge_bce", check_edge_bce},
        {"channel_attention", check_channel_attention},
        {"spatial_attention", check_spatial_attention},
        {"low_level_combine", check_low_level_combine},
    };
    return table;
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
    std::vector<std::string> names;
    for (const auto& [name, fn] : op_table()) names.push_back(name);
    return names;
}

GradCheckResult run_op_gradcheck(const std::string& op, std::uint64_t base_seed, int num_seeds) {
    const auto& table = op_table();
    auto it = table.find(op);
    if (it == table.end()) {
        throw ConfigError("gradcheck: unknown operator '" + op + "' (see --list)");
    }
    GradCheckResult r{op, num_seeds, 0.0, 1e-4, false};
    for (int s = 0; s < num_seeds; ++s) {
        Rng rng(Rng::mix(base_seed, static_cast<std::uint64_t>(s)));
        r.max_rel_err = std::max(r.max_rel_err, it->second(rng));
    }
    r.pass = r.max_rel_err <= r.tolerance;
    return r;
}

GradCheckResult run_end_to_end_gradcheck(std::uint64_t base_seed) {
    PfaConfig cfg;
    cfg.backbone.stage_channels = {2, 2, 2, 2, 2};
    cfg.backbone.convs_per_stage = {1, 1, 1, 1, 1};
    cfg.backbone.input_size = {16, 16};
    cfg.cpfe.branch_channels = 4;  // pyramid = 48 channels
    cfg.ca_reduction = 4;
    cfg.sa_kernel = 9;

    GradCheckResult r{"end_to_end", 1, 0.0, 1e-3, false};
    Rng rng(Rng::mix(base_seed, 9001));
    PfaNet<double> net = PfaNet<double>::build(cfg, rng.next_u64());
    // Nudge every parameter off the zero-bias init: freshly built nets sit
    // exactly on relu kinks (zero inputs x zero bias), where one-sided
    // subgradients and central differences legitimately disagree. The check
    // wants a generic point in parameter space.
    for (auto& [name, param] : net.params()) {
        for (auto& v : param->value.data) v += rng.uniform(-0.05, 0.05);
    }
    Tensor<double> image = random_uniform<double>(rng, {1, 3, 16, 16}, 0.0, 1.0);
    Tensor<double> target = rand_binary(rng, {1, 1, 16, 16});
    LossConfig loss_cfg;
    loss_cfg.alpha = 0.7;

    Var<double> image_leaf = leaf(image, true);
    auto forward_loss = [&]() {
        PfaOutput<double> out = net.forward(image_leaf);
        return total_loss(out.map, constant(target), loss_cfg, LossMode::kMean);
    };
    backward(forward_loss());

    const double eps = 1e-5;
    auto compare = [&](const Var<double>& node) {
        const std::size_t n = node->value.numel();
        std::vector<std::size_t> idx;
        for (int k = 0; k < 6 && idx.size() < n; ++k) {
            idx.push_back(static_cast<std::size_t>(rng.next_u64() % n));
        }
        std::sort(idx.begin(), idx.end());
        idx.erase(std::unique(idx.begin(), idx.end()), idx.end());

        auto f = [&](const Tensor<double>& x) {
            Tensor<double> saved = node->value;
            node->value = x;
            const double v = forward_loss()->value.data[0];
            node->value = saved;
            return v;
        };
        std::vector<double> numeric = finite_diff_grad_at(f, node->value, idx, eps);
        const Tensor<double>& g = node->grad;
        std::vector<double> analytic;
        analytic.reserve(idx.size());
        for (std::size_t i : idx) analytic.push_back(g.numel() ? g.data[i] : 0.0);
        r.max_rel_err = std::max(r.max_rel_err, max_rel_err(analytic, numeric));
    };
    for (const auto& [name, param] : net.params()) compare(param);
    compare(image_leaf);
    r.pass = r.max_rel_err <= r.tolerance;
    return r;
}

std::vector<GradCheckResult> run_all_gradchecks(std::uint64_t base_seed, int num_seeds) {
    std::vector<GradCheckResult> results;
    for (const std::string& op : gradcheck_ops()) {
        results.push_back(run_op_gradcheck(op, base_seed, num_seeds));
    }
    results.push_back(run_end_to_end_gradcheck(base_seed));
    return results;
}

}  // namespace pfa
