#include <cinttypes>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "quip/analysis.hpp"
#include "quip/clamp_safe.hpp"
#include "quip/incoherence.hpp"
#include "quip/linalg.hpp"
#include "quip/matio.hpp"
#include "quip/verify.hpp"

namespace {

struct Common {
    std::string format = "human";
};

void print_kv(const char * key, const std::string & value) { std::printf("%s=%s\n", key, value.c_str()); }

void print_report(const quip::QuipResult & r, const std::string & method, const Common & common) {
    char buf[64];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        return std::string(buf);
    };
    if (common.format == "kv") {
        print_kv("method", method);
        print_kv("bits", std::to_string(r.layer.bits));
        print_kv("seed", std::to_string(r.layer.meta.seed));
        print_kv("proxy_loss", num(r.proxy_loss_damped));
        print_kv("proxy_loss_raw", num(r.proxy_loss_raw));
        print_kv("mu_w", num(r.mu_w_processed));
        print_kv("range_clamp_count", std::to_string(r.range_clamp_count));
        print_kv("round_clamp_count", std::to_string(r.round_clamp_count));
    } else {
        std::printf("method            %s\n", method.c_str());
        std::printf("bits              %d\n", r.layer.bits);
        std::printf("seed              %" PRIu64 "\n", r.layer.meta.seed);
        std::printf("proxy loss        %.10g   (damped H)\n", r.proxy_loss_damped);
        std::printf("proxy loss (raw)  %.10g\n", r.proxy_loss_raw);
        std::printf("mu_w (processed)  %.4f\n", r.mu_w_processed);
        std::printf("range clamps      %lld\n", r.range_clamp_count);
        std::printf("round clamps      %lld\n", r.round_clamp_count);
    }
}

int cmd_quantize(const std::string & weights_path, const std::string & hessian_path, int bits,
                 const std::string & method, const std::string & incoherence, double rho, double alpha,
                 uint64_t seed, int passes, const std::string & subroutine, int threads, double delta,
                 const std::string & out, const Common & common) {
    const quip::Matrix w = quip::read_matrix(weights_path);
    const quip::Matrix h = quip::read_matrix(hessian_path);

    if (method == "clampsafe") {
        const quip::ClampSafeResult r = quip::quantize_clamp_safe(w, h, bits, delta, seed);
        quip::write_quantized(r.layer, out);
        if (common.format == "kv") {
            print_kv("method", method);
            print_kv("proxy_loss", std::to_string(r.stats.proxy_loss));
            print_kv("pre_round_out_of_range", std::to_string(r.stats.pre_round_out_of_range));
            print_kv("clamp_fires", std::to_string(r.stats.clamp_fires));
            print_kv("c", std::to_string(r.stats.c));
        } else {
            std::printf("method            clampsafe\n");
            std::printf("proxy loss        %.10g\n", r.stats.proxy_loss);
            std::printf("pre-round oor     %lld\n", r.stats.pre_round_out_of_range);
            std::printf("clamp fires       %lld\n", r.stats.clamp_fires);
            std::printf("c                 %.6g\n", r.stats.c);
        }
        return 0;
    }

    quip::QuipOptions opts;
    opts.bits = bits;
    opts.rho = rho;
    opts.alpha = alpha;
    opts.seed = seed;
    opts.passes = passes;
    opts.threads = threads;
    opts.method = quip::method_from_string(method);
    opts.incoherence = incoherence == "on";
    opts.subroutine = subroutine == "stochastic" ? quip::Subroutine::Stochastic : quip::Subroutine::Nearest;

    const quip::QuipResult r = quip::quip(w, h, opts);
    quip::write_quantized(r.layer, out);
    print_report(r, method, common);
    return 0;
}

int cmd_dequantize(const std::string & in, const std::string & out) {
    const quip::QuantizedLayer layer = quip::read_quantized(in);
    quip::write_matrix(quip::dequantize(layer), out);
    return 0;
}

int cmd_stats(const std::string & hessian_path, const Common & common) {
    const quip::Matrix h = quip::read_matrix(hessian_path);
    quip::require_symmetric(h, "stats");
    const quip::HessianStats s = quip::hessian_stats(h);
    if (common.format == "kv") {
        print_kv("frac_rank_abs", std::to_string(s.frac_rank_abs));
        print_kv("frac_rank_approx", std::to_string(s.frac_rank_approx));
        print_kv("trace_ratio", std::to_string(s.trace_ratio));
    } else {
        std::printf("fractional rank (absolute)     %.6f\n", s.frac_rank_abs);
        std::printf("fractional rank (approximate)  %.6f\n", s.frac_rank_approx);
        std::printf("tr(D)/tr(H)                    %.6f\n", s.trace_ratio);
    }
    return 0;
}

int cmd_gen(std::size_t rows, std::size_t cols, std::size_t n, std::size_t rank, double scale,
            const std::string & dist, double eps, uint64_t seed, const std::string & out) {
    const bool want_weights = rows > 0 || cols > 0;
    const bool want_hessian = n > 0;
    if (want_weights == want_hessian) {
        throw quip::DataError("gen: pass either --rows/--cols (weights) or --n/--rank (hessian)");
    }
    if (want_weights) {
        if (rows == 0 || cols == 0) {
            throw quip::DataError("gen: both --rows and --cols are required for weights");
        }
        quip::Matrix w(rows, cols);
        quip::Rng    rng(seed, 7);
        if (dist == "uniform") {
            for (double & v : w.data) {
                v = rng.next_unit();
            }
        } else if (dist == "gaussian") {
            for (double & v : w.data) {
                v = rng.next_gaussian();
            }
        } else if (dist == "halfpm") {
            w = quip::worst_case_weights(rows, cols, eps, seed);
        } else {
            throw quip::DataError("gen: unknown --dist " + dist);
        }
        quip::write_matrix(w, out);
    } else {
        if (rank == 0 || rank > n) {
            throw quip::DataError("gen: --rank must satisfy 1 <= rank <= n");
        }
        quip::Rng           rng(seed, 8);
        std::vector<double> spectrum(rank);
        for (double & v : spectrum) {
            v = (0.1 + 0.9 * rng.next_unit()) * scale;
        }
        std::sort(spectrum.begin(), spectrum.end(), std::greater<double>());
        quip::write_matrix(quip::generate_lowrank_psd(n, rank, spectrum, seed), out);
    }
    return 0;
}

int cmd_verify(const std::string & suite, uint64_t seed, bool quick, int threads) {
    quip::VerifyOptions opts;
    opts.seed = seed;
    opts.quick = quick;
    opts.threads = threads;
    const auto results = quip::run_suite(suite, opts);
    bool       all_pass = true;
    for (const auto & r : results) {
        std::printf("[%s] %-15s %6.1fs  %s\n", r.pass ? "PASS" : "FAIL", r.id.c_str(), r.seconds,
                    r.detail.c_str());
        all_pass = all_pass && r.pass;
    }
    std::printf("%s\n", all_pass ? "ALL CHECKS PASSED" : "CHECK FAILURES PRESENT");
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char ** argv) {
    CLI::App app{"QuIP: adaptive rounding with linear feedback plus incoherence processing"};
    app.require_subcommand(1);

    Common common;
    app.add_option("--format", common.format, "report format: human|kv")
        ->check(CLI::IsMember({"human", "kv"}));

    // quantize
    auto * q = app.add_subcommand("quantize", "quantize a weight matrix against a proxy Hessian");
    std::string q_weights, q_hessian, q_out;
    std::string q_method = "ldlq", q_incoherence = "on", q_subroutine = "nearest";
    int         q_bits = 2, q_passes = 10, q_threads = 1;
    double      q_rho = 2.4, q_alpha = 0.01, q_delta = 0.05;
    uint64_t    q_seed = 0;
    q->add_option("--weights", q_weights, "QMAT weight matrix")->required();
    q->add_option("--hessian", q_hessian, "QMAT proxy Hessian")->required();
    q->add_option("--bits", q_bits, "grid bits, 2..16")->check(CLI::Range(2, 16));
    q->add_option("--method", q_method, "ldlq|ldlq_rg|greedy|near|stoch|clampsafe")
        ->check(CLI::IsMember({"ldlq", "ldlq_rg", "greedy", "near", "stoch", "clampsafe"}));
    q->add_option("--incoherence", q_incoherence, "on|off")->check(CLI::IsMember({"on", "off"}));
    q->add_option("--rho", q_rho, "quantization range multiplier");
    q->add_option("--alpha", q_alpha, "Hessian damping");
    q->add_option("--seed", q_seed, "master seed");
    q->add_option("--passes", q_passes, "greedy passes (greedy / ldlq_rg)");
    q->add_option("--subroutine", q_subroutine, "nearest|stochastic")
        ->check(CLI::IsMember({"nearest", "stochastic"}));
    q->add_option("--threads", q_threads, "row-parallel workers; output is invariant to this");
    q->add_option("--delta", q_delta, "failure budget (clampsafe only)");
    q->add_option("--out", q_out, "output QZ path")->required();

    // dequantize
    auto *      d = app.add_subcommand("dequantize", "reconstruct a QMAT matrix from a QZ layer");
    std::string d_in, d_out;
    d->add_option("--in", d_in, "input QZ path")->required();
    d->add_option("--out", d_out, "output QMAT path")->required();

    // stats
    auto *      s = app.add_subcommand("stats", "summary statistics of a proxy Hessian");
    std::string s_hessian;
    s->add_option("--hessian", s_hessian, "QMAT proxy Hessian")->required();

    // gen
    auto *      g = app.add_subcommand("gen", "generate synthetic weights or Hessians");
    std::size_t g_rows = 0, g_cols = 0, g_n = 0, g_rank = 0;
    double      g_scale = 1.0, g_eps = 1e-3;
    std::string g_dist = "uniform", g_out;
    uint64_t    g_seed = 0;
    g->add_option("--rows", g_rows, "weight rows");
    g->add_option("--cols", g_cols, "weight cols");
    g->add_option("--n", g_n, "Hessian dimension");
    g->add_option("--rank", g_rank, "Hessian rank");
    g->add_option("--scale", g_scale, "spectrum scale");
    g->add_option("--dist", g_dist, "weights distribution: uniform|gaussian|halfpm");
    g->add_option("--eps", g_eps, "halfpm epsilon");
    g->add_option("--seed", g_seed, "master seed");
    g->add_option("--out", g_out, "output QMAT path")->required();

    // verify
    auto *      v = app.add_subcommand("verify", "run the acceptance suites");
    std::string v_suite = "all";
    uint64_t    v_seed = 20240101;
    bool        v_quick = false;
    int         v_threads = 1;
    v->add_option("--suite", v_suite, "suite name or 'all'");
    v->add_option("--seed", v_seed, "suite seed");
    v->add_flag("--quick", v_quick, "reduced sizes (development only)");
    v->add_option("--threads", v_threads, "trial-parallel workers");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (q->parsed()) {
            return cmd_quantize(q_weights, q_hessian, q_bits, q_method, q_incoherence, q_rho, q_alpha,
                                q_seed, q_passes, q_subroutine, q_threads, q_delta, q_out, common);
        }
        if (d->parsed()) {
            return cmd_dequantize(d_in, d_out);
        }
        if (s->parsed()) {
            return cmd_stats(s_hessian, common);
        }
        if (g->parsed()) {
            return cmd_gen(g_rows, g_cols, g_n, g_rank, g_scale, g_dist, g_eps, g_seed, g_out);
        }
        if (v->parsed()) {
            return cmd_verify(v_suite, v_seed, v_quick, v_threads);
        }
    } catch (const quip::NumericalError & e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const std::exception & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
