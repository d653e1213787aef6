#include "quip/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>

#include "quip/analysis.hpp"
#include "quip/clamp_safe.hpp"
#include "quip/incoherence.hpp"
#include "quip/linalg.hpp"
#include "quip/matio.hpp"
#include "quip/rounding.hpp"

namespace quip {

namespace {

std::string fmt(const char * f, ...) {
    char    buf[512];
    va_list args;
    va_start(args, f);
    vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

Matrix uniform_matrix(std::size_t m, std::size_t n, Rng & rng, double lo = 0.0, double hi = 1.0) {
    Matrix w(m, n);
    for (double & v : w.data) {
        v = lo + (hi - lo) * rng.next_unit();
    }
    return w;
}

Matrix gaussian_matrix(std::size_t m, std::size_t n, Rng & rng) {
    Matrix w(m, n);
    for (double & v : w.data) {
        v = rng.next_gaussian();
    }
    return w;
}

std::vector<double> descending_spectrum(std::size_t k, Rng & rng, double lo = 0.1, double hi = 1.0) {
    std::vector<double> s(k);
    for (double & v : s) {
        v = lo + (hi - lo) * rng.next_unit();
    }
    std::sort(s.begin(), s.end(), std::greater<double>());
    return s;
}

Matrix random_psd(std::size_t n, std::size_t rank, Rng & rng, double ridge = 0.0) {
    auto   spec = descending_spectrum(rank, rng);
    Matrix h = generate_lowrank_psd(n, rank, spec, rng.next_u64());
    for (std::size_t i = 0; i < n; ++i) {
        h.at(i, i) += ridge;
    }
    return h;
}

// ---- criterion 1: LDLQ == OPTQ ------------------------------------------

CheckResult check_equivalence(const VerifyOptions & opts) {
    CheckResult res{"equivalence", true, "", 0.0};
    Rng         rng(opts.seed, 100);
    const int   instances = opts.quick ? 10 : 50;
    const int   bit_cycle[4] = {2, 3, 4, 8};

    int matched = 0;
    for (int t = 0; t < instances; ++t) {
        Rng               trial = rng.derive(t);
        const std::size_t n = 4 + trial.next_u64() % 253;  // <= 256
        const std::size_t m = 1 + trial.next_u64() % 256;
        const std::size_t rank = 1 + trial.next_u64() % n;
        const Matrix      h = random_psd(n, rank, trial, 1e-3);
        const Matrix      w = uniform_matrix(m, n, trial);

        RoundingConfig cfg;
        cfg.bits = bit_cycle[t % 4];
        const Matrix a = ldlq(w, h, cfg);
        const Matrix b = optq_reference(w, h, cfg);
        if (a == b) {
            ++matched;
        } else {
            res.pass = false;
        }
    }

    // the large synthetic instance from the paper's verification
    std::size_t big = opts.quick ? 200 : 1000;
    {
        Rng          trial = rng.derive(9999);
        const Matrix h = random_psd(big, big / 4, trial, 1e-3);
        const Matrix w = uniform_matrix(big, big, trial);
        RoundingConfig cfg;
        cfg.bits = 4;
        const Matrix a = ldlq(w, h, cfg);
        const Matrix b = optq_reference(w, h, cfg);
        if (!(a == b)) {
            res.pass = false;
        }
        res.detail = fmt("%d/%d instances exact, %zux%zu exact=%s", matched, instances, big, big,
                         a == b ? "yes" : "no");
    }
    return res;
}

// ---- criterion 2: closed-form average losses ------------------------------

CheckResult check_losses(const VerifyOptions & opts) {
    CheckResult res{"losses", true, "", 0.0};
    Rng         rng(opts.seed, 101);
    const std::size_t n = 64, m = 16;
    const int         trials = opts.quick ? 400 : 2000;

    const Matrix h = random_psd(n, 8, rng);
    const double tr_h = trace(h);
    const double tr_d = ldl_decompose(h).trace_d();

    struct Case {
        AvgLossMethod method;
        const char *  name;
        double        target;
    };
    const Case cases[] = {
        {AvgLossMethod::Nearest, "near", m / 12.0 * tr_h},
        {AvgLossMethod::Stochastic, "stoch", m / 6.0 * tr_h},
        {AvgLossMethod::LdlqNearest, "ldlq-near", m / 12.0 * tr_d},
        {AvgLossMethod::LdlqStochastic, "ldlq-stoch", m / 6.0 * tr_d},
    };
    std::string detail;
    for (const Case & c : cases) {
        const McEstimate est = estimate_avg_loss(c.method, h, m, trials, rng.next_u64());
        const double     z = (est.mean - c.target) / est.stderr_of_mean;
        if (std::fabs(z) > 3.0) {
            res.pass = false;
        }
        detail += fmt("%s z=%+.2f ", c.name, z);
    }
    res.detail = detail;
    return res;
}

// ---- criterion 3: worst-case losses ---------------------------------------

CheckResult check_worstcase(const VerifyOptions & opts) {
    CheckResult res{"worstcase", true, "", 0.0};
    Rng         rng(opts.seed, 102);
    const std::size_t n = 64, m = 16;
    const double      eps = 1e-3;
    const int         trials = opts.quick ? 100 : 400;

    const Matrix h = random_psd(n, 8, rng);
    const double tr_h = trace(h);
    const LdlFactors f = ldl_decompose(h);
    const double tr_d = f.trace_d();

    // stochastic baseline on the iid construction ~ (m/4) tr(H)
    double sum = 0.0, sum2 = 0.0;
    RoundingConfig cfg;
    cfg.bits = 4;
    cfg.clamp_to_grid = false;
    cfg.subroutine = Subroutine::Stochastic;
    const Matrix zero_u(n, n);
    for (int t = 0; t < trials; ++t) {
        const Matrix w = worst_case_weights(m, n, eps, rng.next_u64());
        cfg.seed = rng.next_u64();
        const double loss = proxy_loss(w, round_with_linear_feedback(w, zero_u, cfg), h);
        sum += loss;
        sum2 += loss * loss;
    }
    const double mean = sum / trials;
    const double sd = std::sqrt(std::max(0.0, (sum2 - sum * sum / trials) / (trials - 1.0)));
    const double z = (mean - m / 4.0 * tr_h) / (sd / std::sqrt(static_cast<double>(trials)));
    if (std::fabs(z) > 3.0) {
        res.pass = false;
    }

    // LDLQ on the adaptive witness: loss is exactly m (1/2 - eps)^2 tr(D)
    cfg.subroutine = Subroutine::Nearest;
    cfg.seed = 0;
    const Matrix w_adv = worst_case_adaptive(m, n, f.u_strict, eps, rng.next_u64());
    const double loss_adv = proxy_loss(w_adv, round_with_linear_feedback(w_adv, f.u_strict, cfg), h);
    const double exact = m * (0.5 - eps) * (0.5 - eps) * tr_d;
    const double target = m / 4.0 * tr_d;
    const bool   adv_ok = std::fabs(loss_adv - exact) <= 1e-9 * std::max(1.0, exact) &&
                          loss_adv <= target * (1.0 + 1e-9) && loss_adv >= target * (1.0 - 4.0 * eps);
    if (!adv_ok) {
        res.pass = false;
    }
    res.detail = fmt("stoch z=%+.2f; ldlq adaptive=%.6f exact=%.6f (m/4)trD=%.6f", z, loss_adv, exact, target);
    return res;
}

// ---- criterion 4: Lemma 2 trace bound -------------------------------------

CheckResult check_tracebound(const VerifyOptions & opts) {
    CheckResult res{"tracebound", true, "", 0.0};
    Rng         rng(opts.seed, 103);
    const int   instances = opts.quick ? 12 : 100;
    const std::size_t dims[] = {64, 256, 1024};

    int violations = 0;
    for (int t = 0; t < instances; ++t) {
        Rng               trial = rng.derive(t);
        const std::size_t n = dims[t % 3];
        const std::size_t ranks[] = {1, n / 16, n / 4, n};
        const std::size_t k = std::max<std::size_t>(1, ranks[(t / 3) % 4]);
        if (opts.quick && n > 256) {
            continue;
        }
        const Matrix          h = random_psd(n, k, trial);
        const TraceBoundAudit audit = audit_trace_bound(h);
        if (!audit.holds) {
            ++violations;
            res.pass = false;
        }
    }
    res.detail = fmt("%d violations over %d instances", violations, instances);
    return res;
}

// ---- criterion 5: Theorem 3 equality witness ------------------------------

CheckResult check_theorem3(const VerifyOptions & opts) {
    CheckResult res{"theorem3", true, "", 0.0};
    Rng         rng(opts.seed, 104);
    const std::size_t n = 64, m = 16;
    const int         trials = opts.quick ? 400 : 2000;

    Matrix h(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        h.at(i, i) = 0.1 + rng.next_unit();
    }
    const uint64_t   mc_seed = rng.next_u64();
    const McEstimate ldlq_est = estimate_avg_loss(AvgLossMethod::LdlqNearest, h, m, trials, mc_seed);
    const McEstimate near_est = estimate_avg_loss(AvgLossMethod::Nearest, h, m, trials, mc_seed);
    const double     sigma = std::hypot(ldlq_est.stderr_of_mean, near_est.stderr_of_mean);
    const double     diff = ldlq_est.mean - near_est.mean;
    if (std::fabs(diff) > 3.0 * sigma) {
        res.pass = false;
    }
    res.detail = fmt("|ldlq - near| = %.3e (3 sigma = %.3e)", std::fabs(diff), 3.0 * sigma);
    return res;
}

// ---- criterion 6: incoherence effectiveness -------------------------------

CheckResult check_incoherence(const VerifyOptions & opts) {
    CheckResult res{"incoherence", true, "", 0.0};
    Rng         rng(opts.seed, 105);
    const std::size_t n = opts.quick ? 256 : 1024;
    const int         seeds = opts.quick ? 10 : 100;
    // Threshold derived by Monte Carlo before the build: mu = sqrt(n) *
    // max|V1| * max|V2| over two-factor Haar transforms has P(mu > 15) ~ 7.5e-4
    // at n = 1024 (20k samples), against sqrt(n) = 32 for the coordinate-
    // aligned input.
    const double threshold = 15.0;

    int ok = 0;
    for (int t = 0; t < seeds; ++t) {
        Rng    trial = rng.derive(t);
        Matrix h(n, n);
        std::vector<double> spec = descending_spectrum(n, trial, 0.5, 10.0);
        for (std::size_t i = 0; i < n; ++i) {
            h.at(i, i) = spec[i];
        }
        const auto v = sample_kron_orthogonal(n, Rng(trial.next_u64(), 4));
        const Matrix hp = kron_apply(v, kron_apply(v, h, Side::Right, true), Side::Left, false);
        const double mu = mu_hessian(hp);
        if (mu <= threshold) {
            ++ok;
        }
    }
    if (ok < seeds - (seeds / 100)) {
        res.pass = false;
    }
    res.detail = fmt("%d/%d seeds with mu <= %.1f (coordinate-aligned baseline sqrt(n) = %.1f)", ok, seeds,
                     threshold, std::sqrt(static_cast<double>(n)));
    return res;
}

// ---- criterion 7: finite-grid counterexample ------------------------------

CheckResult check_counterexample(const VerifyOptions & opts) {
    CheckResult res{"counterexample", true, "", 0.0};
    const std::size_t sizes[] = {16, 64, 256};
    const std::size_t d = 16;

    RoundingConfig cfg;
    cfg.bits = 4;

    double      prev_ratio = 0.0;
    std::string detail;
    for (std::size_t n : sizes) {
        auto [w, h] = make_counterexample(n, d, 0.01);
        const Matrix q_ldlq = ldlq(w, h, cfg);
        const Matrix q_near = round_with_linear_feedback(w, Matrix(n, n), cfg);
        const double l_ldlq = proxy_loss(w, q_ldlq, h);
        const double l_near = proxy_loss(w, q_near, h);
        const double ratio = l_ldlq / l_near;
        if (!(l_ldlq > l_near) || !(ratio > prev_ratio)) {
            res.pass = false;
        }
        detail += fmt("n=%zu ratio=%.1f ", n, ratio);
        prev_ratio = ratio;
    }
    (void)opts;
    res.detail = detail + "(strictly increasing required)";
    return res;
}

// ---- criterion 8: greedy descent ------------------------------------------

CheckResult check_greedy(const VerifyOptions & opts) {
    CheckResult res{"greedy", true, "", 0.0};
    Rng         rng(opts.seed, 106);
    const int   instances = opts.quick ? 10 : 50;
    const int   passes = 10;
    const int   bit_cycle[3] = {2, 3, 4};

    int violations = 0;
    for (int t = 0; t < instances; ++t) {
        Rng               trial = rng.derive(t);
        const std::size_t n = 16 + trial.next_u64() % 49;
        const std::size_t m = 4 + trial.next_u64() % 13;
        const Matrix      h = random_psd(n, std::max<std::size_t>(1, n / 4), trial, 1e-2);
        RoundingConfig    cfg;
        cfg.bits = bit_cycle[t % 3];
        const double hi = static_cast<double>((1u << cfg.bits) - 1);
        const Matrix w = uniform_matrix(m, n, trial, 0.0, hi);

        Matrix cur = ldlq(w, h, cfg);
        double loss = proxy_loss(w, cur, h);
        for (int p = 0; p < passes; ++p) {
            Matrix next = greedy_pass(w, h, cfg, cur);
            const double next_loss = proxy_loss(w, next, h);
            if (next_loss > loss + 1e-9 * (1.0 + loss)) {
                ++violations;
                res.pass = false;
            }
            loss = next_loss;
            cur = std::move(next);
        }
    }
    res.detail = fmt("%d violations over %d instances x %d passes", violations, instances, passes);
    return res;
}

// ---- criterion 9: clamp-safe guarantee ------------------------------------

CheckResult check_clampsafe(const VerifyOptions & opts) {
    CheckResult res{"clampsafe", true, "", 0.0};
    Rng         rng(opts.seed, 107);
    const std::size_t n = 64, m = 64;
    const int         trials = opts.quick ? 20 : 200;
    const double      delta = 0.05;

    int fired = 0;
    for (int t = 0; t < trials; ++t) {
        Rng          trial = rng.derive(t);
        const Matrix w = gaussian_matrix(m, n, trial);
        const Matrix h = random_psd(n, 8, trial, 1e-2);
        const ClampSafeResult r = quantize_clamp_safe(w, h, 3, delta, trial.next_u64());
        if (r.stats.pre_round_out_of_range > 0 || r.stats.scale_out_of_range > 0) {
            ++fired;
        }
    }
    const double frac = static_cast<double>(fired) / trials;
    const double limit = delta + 3.0 * std::sqrt(delta * (1.0 - delta) / trials);
    if (frac > limit) {
        res.pass = false;
    }

    // c -> infinity must recover the LDL factor's objective tr(D)
    Rng          trial = rng.derive(100000);
    const Matrix h = random_psd(32, 8, trial, 1e-2);
    const double tr_d = ldl_decompose(h).trace_d();
    const ConstrainedFactor f = solve_constrained(h, 1e6);
    const double rel = std::fabs(f.objective - tr_d) / std::max(1e-300, tr_d);
    if (rel > 1e-6) {
        res.pass = false;
    }
    res.detail = fmt("fired %d/%d (limit %.3f); c=1e6 objective rel err %.2e", fired, trials, limit, rel);
    return res;
}

// ---- criterion 10: end-to-end round trip ----------------------------------

CheckResult check_roundtrip(const VerifyOptions & opts) {
    CheckResult res{"roundtrip", true, "", 0.0};
    Rng         rng(opts.seed, 108);
    const std::size_t n = opts.quick ? 64 : 256;
    const std::size_t m = n;

    const Matrix w = gaussian_matrix(m, n, rng);
    const Matrix h = random_psd(n, n / 4, rng, 1e-2);

    QuipOptions qopts;
    qopts.bits = 16;
    qopts.seed = rng.next_u64();
    const QuipResult qr = quip(w, h, qopts);
    Matrix           diff = qr.w_hat;
    for (std::size_t i = 0; i < diff.data.size(); ++i) {
        diff.data[i] -= w.data[i];
    }
    const double rel = frob_norm(diff) / frob_norm(w);
    if (rel > 1e-3) {
        res.pass = false;
    }

    // bit-exact serialization round trips
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "quip_verify";
    fs::create_directories(dir);
    const std::string wpath = (dir / "w.qmat").string();
    const std::string zpath = (dir / "w.qz").string();
    write_matrix(w, wpath);
    const Matrix w2 = read_matrix(wpath);
    const bool   mat_ok = w2 == w;
    write_quantized(qr.layer, zpath);
    const QuantizedLayer l2 = read_quantized(zpath);
    const bool codes_ok = l2.codes == qr.layer.codes && l2.bits == qr.layer.bits &&
                          l2.meta.scale == qr.layer.meta.scale && l2.meta.seed == qr.layer.meta.seed &&
                          l2.meta.d_tilde == qr.layer.meta.d_tilde &&
                          l2.meta.row_perm == qr.layer.meta.row_perm &&
                          l2.meta.col_perm == qr.layer.meta.col_perm;
    const bool deq_ok = dequantize(l2) == qr.w_hat;
    if (!mat_ok || !codes_ok || !deq_ok) {
        res.pass = false;
    }
    res.detail = fmt("b=16 rel err %.2e; qmat exact=%s qz exact=%s dequant exact=%s", rel,
                     mat_ok ? "yes" : "no", codes_ok ? "yes" : "no", deq_ok ? "yes" : "no");
    return res;
}

// ---- criterion 11: determinism & parallel invariance -----------------------

CheckResult check_determinism(const VerifyOptions & opts) {
    CheckResult res{"determinism", true, "", 0.0};
    Rng         rng(opts.seed, 109);
    const std::size_t n = 64, m = 48;

    const Matrix w = gaussian_matrix(m, n, rng);
    const Matrix h = random_psd(n, 8, rng, 1e-2);

    QuipOptions qopts;
    qopts.bits = 3;
    qopts.seed = 1234;
    qopts.subroutine = Subroutine::Stochastic;

    const QuipResult a = quip(w, h, qopts);
    const QuipResult b = quip(w, h, qopts);
    qopts.threads = 4;
    const QuipResult c = quip(w, h, qopts);

    const bool repeat_ok = a.layer.codes == b.layer.codes && a.w_hat == b.w_hat;
    const bool thread_ok = a.layer.codes == c.layer.codes && a.w_hat == c.w_hat;

    // identical bytes on disk
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "quip_verify";
    fs::create_directories(dir);
    const std::string p1 = (dir / "d1.qz").string();
    const std::string p2 = (dir / "d2.qz").string();
    write_quantized(a.layer, p1);
    write_quantized(c.layer, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    const bool bytes_ok = !b1.empty() && b1 == b2;

    if (!repeat_ok || !thread_ok || !bytes_ok) {
        res.pass = false;
    }
    res.detail = fmt("repeat=%s threads=%s bytes=%s", repeat_ok ? "ok" : "FAIL",
                     thread_ok ? "ok" : "FAIL", bytes_ok ? "ok" : "FAIL");
    return res;
}

using CheckFn = CheckResult (*)(const VerifyOptions &);

const std::vector<std::pair<std::string, CheckFn>> & registry() {
    static const std::vector<std::pair<std::string, CheckFn>> r = {
        {"equivalence", check_equivalence}, {"losses", check_losses},
        {"worstcase", check_worstcase},     {"tracebound", check_tracebound},
        {"theorem3", check_theorem3},       {"incoherence", check_incoherence},
        {"counterexample", check_counterexample}, {"greedy", check_greedy},
        {"clampsafe", check_clampsafe},     {"roundtrip", check_roundtrip},
        {"determinism", check_determinism},
    };
    return r;
}

}  // namespace

const std::vector<std::string> & verify_suites() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto & [name, fn] : registry()) {
            v.push_back(name);
        }
        v.push_back("all");
        return v;
    }();
    return names;
}

std::vector<CheckResult> run_suite(const std::string & suite, const VerifyOptions & opts) {
    std::vector<CheckResult> results;
    bool matched = false;
    for (const auto & [name, fn] : registry()) {
        if (suite == "all" || suite == name) {
            matched = true;
            const auto  start = std::chrono::steady_clock::now();
            CheckResult r = fn(opts);
            r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            results.push_back(std::move(r));
        }
    }
    if (!matched) {
        throw DataError("unknown verify suite: " + suite);
    }
    return results;
}

}  // namespace quip
