// Command-line workbench for the masked-diffusion duality library:
// calibration tables, Monte Carlo duality verification, teacher
// pretraining, consistency distillation, sampling and benchmarking,
// plus a `repro` subcommand chaining the whole pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mcd/calibration.hpp"
#include "mcd/config.hpp"
#include "mcd/eval.hpp"
#include "mcd/latent.hpp"
#include "mcd/markov.hpp"
#include "mcd/sampler.hpp"
#include "mcd/trainer.hpp"

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_dir;
    std::string seed_override;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "key=value config file");
    cmd->add_option("--set", c.sets, "override a config key, e.g. --set sample.steps=8")
        ->take_all();
    cmd->add_option("--out", c.out_dir, "output directory")->required();
    cmd->add_option("--seed", c.seed_override, "override the top-level seed");
}

mcd::RunConfig resolve(const Common& c) {
    mcd::RunConfig cfg;
    if (!c.config_path.empty()) cfg.load_file(c.config_path);
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("--set expects key=value, got: " + kv);
        }
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1), "--set");
    }
    if (!c.seed_override.empty()) cfg.set("seed", c.seed_override, "--seed");
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << text;
    if (!os) throw std::runtime_error("write failed: " + path);
}

void echo_resolved(const mcd::RunConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/resolved.cfg", cfg.resolved());
}

std::string keys_footer() {
    std::string out = "Config keys (file or --set; defaults shown):\n";
    for (const auto& e : mcd::config_registry()) {
        out += "  ";
        out += e.key;
        out += " = ";
        out += e.def;
        out += "\n      ";
        out += e.doc;
        out += "\n";
    }
    return out;
}

mcd::Schedule schedule_from(const mcd::RunConfig& cfg) {
    return mcd::Schedule(mcd::schedule_kind_from_string(cfg.str("schedule.kind")),
                         cfg.real("schedule.t_min"));
}

mcd::ModelConfig model_from(const mcd::RunConfig& cfg) {
    mcd::ModelConfig mc;
    mc.vocab = int(cfg.integer("model.vocab"));
    mc.context = int(cfg.integer("model.context"));
    mc.width = int(cfg.integer("model.width"));
    mc.depth = int(cfg.integer("model.depth"));
    mc.heads = int(cfg.integer("model.heads"));
    mc.validate();
    return mc;
}

mcd::MarkovSource source_from(const mcd::RunConfig& cfg) {
    return mcd::make_source(std::uint64_t(cfg.integer("seed")),
                            int(cfg.integer("eval.order")),
                            int(cfg.integer("eval.alphabet")));
}

void require_vocab_match(const mcd::RunConfig& cfg) {
    if (cfg.integer("model.vocab") != cfg.integer("eval.alphabet") + 1) {
        throw std::runtime_error("config: model.vocab must equal eval.alphabet + 1");
    }
}

std::vector<mcd::TokenSequence> build_corpus(const mcd::MarkovSource& source,
                                             std::int64_t n_tokens, int length,
                                             std::uint64_t seed, std::uint64_t item_offset) {
    const mcd::RngStream rng(seed, mcd::Stream::corpus);
    const std::int64_t lines = n_tokens / length;
    std::vector<mcd::TokenSequence> out;
    out.reserve(std::size_t(lines));
    for (std::int64_t ln = 0; ln < lines; ++ln) {
        out.push_back(source.sample_sequence(length, rng, item_offset + std::uint64_t(ln)));
    }
    return out;
}

void write_corpus_file(const std::vector<mcd::TokenSequence>& corpus, const std::string& path) {
    std::string text;
    text.reserve(corpus.size() * (corpus.empty() ? 1 : corpus[0].size() + 1));
    for (const auto& seq : corpus) {
        text += mcd::decode(seq);
        text += '\n';
    }
    write_text(path, text);
}

// ---------------------------------------------------------------- calibrate

int cmd_calibrate(const Common& common) {
    const mcd::RunConfig cfg = resolve(common);
    echo_resolved(cfg, common.out_dir);
    const mcd::CalibratedSchedule cal(schedule_from(cfg), int(cfg.integer("schedule.K")),
                                      cfg.real("schedule.cdf_tol"),
                                      int(cfg.integer("schedule.gh_nodes")));
    std::vector<double> ts;
    if (!cfg.str("calibrate.t_list").empty()) {
        ts = cfg.real_list("calibrate.t_list");
    } else {
        const std::int64_t n = cfg.integer("calibrate.points");
        for (std::int64_t i = 0; i < n; ++i) ts.push_back(double(i) / double(n - 1));
    }
    std::string csv = "t,gamma,ratio,alpha,sigma\n";
    char buf[200];
    for (double t : ts) {
        const double g = cal.gamma_at(t);
        const double r = cal.ratio(t);
        const auto c = cal.coefficients(t);
        std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g,%.12g,%.12g\n", t, g, r, c.alpha,
                      c.sigma);
        csv += buf;
    }
    write_text(common.out_dir + "/calibration.csv", csv);
    std::cout << "calibration table written: " << common.out_dir << "/calibration.csv\n";
    return 0;
}

// ------------------------------------------------------------------ verify

int cmd_verify(const Common& common) {
    const mcd::RunConfig cfg = resolve(common);
    echo_resolved(cfg, common.out_dir);
    const mcd::Schedule schedule = schedule_from(cfg);
    const auto k_list = cfg.int_list("verify.K_list");
    std::vector<mcd::DualityReport> reports;
    bool all_pass = true;
    for (auto K : k_list) {
        mcd::DualityReport rep = mcd::verify_duality_report(
            int(K), schedule, std::uint64_t(cfg.integer("verify.samples")),
            int(cfg.integer("verify.t_grid")), std::uint64_t(cfg.integer("seed")),
            cfg.real("schedule.cdf_tol"), int(cfg.integer("run.threads")));
        std::cout << "K=" << K << (rep.pass() ? " pass" : " FAIL")
                  << " (nesting=" << rep.nesting_violations
                  << ", min lock agreement=" << rep.min_lock_agreement() << ")\n";
        all_pass = all_pass && rep.pass();
        reports.push_back(std::move(rep));
    }
    write_text(common.out_dir + "/duality_report.csv", mcd::duality_report_csv(reports));
    std::cout << "duality report written: " << common.out_dir << "/duality_report.csv\n";
    return all_pass ? 0 : 2;
}

// ---------------------------------------------------------------- pretrain

mcd::DenoiserModel run_pretrain(const mcd::RunConfig& cfg, const std::string& out_dir) {
    require_vocab_match(cfg);
    const std::uint64_t seed = std::uint64_t(cfg.integer("seed"));
    const mcd::MarkovSource source = source_from(cfg);
    const int L = int(cfg.integer("model.context"));
    const auto train =
        build_corpus(source, cfg.integer("eval.train_tokens"), L, seed, 0);
    const auto heldout = build_corpus(source, cfg.integer("eval.heldout_tokens"), L, seed,
                                      std::uint64_t(1) << 32);
    write_corpus_file(train, out_dir + "/train.txt");
    write_corpus_file(heldout, out_dir + "/heldout.txt");

    mcd::DenoiserModel model = mcd::init_model(model_from(cfg), seed);
    mcd::PretrainConfig pc;
    pc.steps = cfg.integer("pretrain.steps");
    pc.batch = int(cfg.integer("pretrain.batch"));
    pc.lr = cfg.real("pretrain.lr");
    pc.warmup = int(cfg.integer("pretrain.warmup"));
    pc.seed = seed;
    pc.schedule = schedule_from(cfg);
    std::string metrics;
    const mcd::DataStream stream(train, seed, mcd::Stream::pretrain_data);
    model = mcd::pretrain_teacher(stream, std::move(model), pc, &metrics);
    write_text(out_dir + "/pretrain_metrics.csv", metrics);
    mcd::save_checkpoint(model, out_dir + "/teacher.mcd");
    return model;
}

int cmd_pretrain(const Common& common) {
    const mcd::RunConfig cfg = resolve(common);
    echo_resolved(cfg, common.out_dir);
    run_pretrain(cfg, common.out_dir);
    std::cout << "teacher written: " << common.out_dir << "/teacher.mcd\n";
    return 0;
}

// ----------------------------------------------------------------- distill

mcd::DistillConfig distill_config_from(const mcd::RunConfig& cfg) {
    mcd::DistillConfig dc;
    dc.rounds = int(cfg.integer("distill.rounds"));
    dc.iters_per_round = int(cfg.integer("distill.iters"));
    dc.delta0 = cfg.real("distill.delta0");
    dc.lr = cfg.real("distill.lr");
    dc.warmup = int(cfg.integer("distill.warmup"));
    dc.tau_init = cfg.real("distill.tau_init");
    dc.tau_step = cfg.real("distill.tau_step");
    dc.loss_variant = mcd::loss_kind_from_string(cfg.str("distill.loss"));
    dc.batch = int(cfg.integer("distill.batch"));
    dc.seed = std::uint64_t(cfg.integer("seed"));
    dc.schedule = mcd::Schedule(mcd::schedule_kind_from_string(cfg.str("schedule.kind")),
                                cfg.real("schedule.t_min"));
    dc.validate();
    return dc;
}

mcd::DistillResult run_distill(const mcd::RunConfig& cfg, const mcd::DenoiserModel& teacher,
                               const std::string& out_dir) {
    require_vocab_match(cfg);
    const std::uint64_t seed = std::uint64_t(cfg.integer("seed"));
    const mcd::MarkovSource source = source_from(cfg);
    const auto train = build_corpus(source, cfg.integer("eval.train_tokens"),
                                    int(cfg.integer("model.context")), seed, 0);
    const mcd::DataStream stream(train, seed, mcd::Stream::distill_data);
    const mcd::DistillConfig dc = distill_config_from(cfg);
    mcd::DistillResult res = mcd::run_distillation(teacher, dc, stream, out_dir);
    write_text(out_dir + "/metrics.csv", res.metrics_csv);
    if (res.aborted) {
        std::cout << "distillation aborted: " << res.abort_reason << "\n";
        std::cout << "last good checkpoints retained (" << res.checkpoint_paths.size()
                  << " rounds)\n";
    }
    return res;
}

int cmd_distill(const Common& common, const std::string& teacher_path) {
    const mcd::RunConfig cfg = resolve(common);
    if (teacher_path.empty() || !std::filesystem::exists(teacher_path)) {
        throw std::runtime_error("distill: missing teacher checkpoint: " + teacher_path);
    }
    echo_resolved(cfg, common.out_dir);
    const mcd::DenoiserModel teacher = mcd::load_checkpoint(teacher_path);
    if (!(teacher.config == model_from(cfg))) {
        throw std::runtime_error("distill: teacher checkpoint does not match model.* config");
    }
    run_distill(cfg, teacher, common.out_dir);
    std::cout << "distillation metrics written: " << common.out_dir << "/metrics.csv\n";
    return 0;
}

// ------------------------------------------------------------------ sample

int cmd_sample(const Common& common, const std::string& ckpt_path) {
    const mcd::RunConfig cfg = resolve(common);
    if (ckpt_path.empty() || !std::filesystem::exists(ckpt_path)) {
        throw std::runtime_error("sample: missing model checkpoint: " + ckpt_path);
    }
    echo_resolved(cfg, common.out_dir);
    const mcd::DenoiserModel model = mcd::load_checkpoint(ckpt_path);
    mcd::SamplerConfig sc;
    sc.steps = int(cfg.integer("sample.steps"));
    sc.schedule = schedule_from(cfg);
    sc.seed = std::uint64_t(cfg.integer("seed"));
    const int count = int(cfg.integer("sample.count"));
    const auto samples = mcd::generate(model, sc, count);
    std::string text;
    for (const auto& s : samples) {
        text += mcd::decode(s);
        text += '\n';
    }
    write_text(common.out_dir + "/samples.txt", text);
    if (cfg.flag("sample.scores")) {
        const mcd::MarkovSource source = source_from(cfg);
        std::string csv = "index,mean_logprob,ppl\n";
        char buf[120];
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const double lp = source.log_prob(samples[i]) / double(samples[i].size());
            std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g\n", i, lp, std::exp(-lp));
            csv += buf;
        }
        write_text(common.out_dir + "/scores.csv", csv);
    }
    std::cout << count << " samples written: " << common.out_dir << "/samples.txt\n";
    return 0;
}

// -------------------------------------------------------------------- eval

int cmd_eval(const Common& common, const std::string& teacher_path,
             const std::vector<std::string>& student_paths, const std::string& out_name) {
    const mcd::RunConfig cfg = resolve(common);
    if (teacher_path.empty() || !std::filesystem::exists(teacher_path)) {
        throw std::runtime_error("eval: missing teacher checkpoint: " + teacher_path);
    }
    echo_resolved(cfg, common.out_dir);
    const mcd::DenoiserModel teacher = mcd::load_checkpoint(teacher_path);
    std::vector<mcd::DenoiserModel> students;
    for (const auto& p : student_paths) students.push_back(mcd::load_checkpoint(p));
    const mcd::MarkovSource source = source_from(cfg);
    std::vector<int> steps_list;
    for (auto v : cfg.int_list("eval.steps_list")) steps_list.push_back(int(v));
    const mcd::EvalReport rep = mcd::run_benchmark(
        teacher, students, steps_list, source, int(cfg.integer("eval.count")),
        std::uint64_t(cfg.integer("seed")), schedule_from(cfg));
    write_text(common.out_dir + "/" + out_name, rep.csv());
    std::cout << "benchmark written: " << common.out_dir << "/" << out_name << "\n";
    std::cout << "source entropy rate: " << rep.source_entropy
              << " nats (ppl floor " << std::exp(rep.source_entropy) << ")\n";
    return 0;
}

// ------------------------------------------------------------------- repro

int cmd_repro(const Common& common) {
    const mcd::RunConfig cfg = resolve(common);
    echo_resolved(cfg, common.out_dir);
    std::cout << "[repro 1/3] pretraining teacher\n";
    const mcd::DenoiserModel teacher = run_pretrain(cfg, common.out_dir);
    std::cout << "[repro 2/3] distilling " << cfg.integer("distill.rounds") << " rounds\n";
    const mcd::DistillResult res = run_distill(cfg, teacher, common.out_dir);
    std::cout << "[repro 3/3] benchmark grid\n";
    std::vector<mcd::DenoiserModel> students;
    for (const auto& p : res.checkpoint_paths) students.push_back(mcd::load_checkpoint(p));
    const mcd::MarkovSource source = source_from(cfg);
    std::vector<int> steps_list;
    for (auto v : cfg.int_list("eval.steps_list")) steps_list.push_back(int(v));
    const mcd::EvalReport rep = mcd::run_benchmark(
        teacher, students, steps_list, source, int(cfg.integer("eval.count")),
        std::uint64_t(cfg.integer("seed")), schedule_from(cfg));
    write_text(common.out_dir + "/table2_desk.csv", rep.csv());
    std::cout << "pipeline table written: " << common.out_dir << "/table2_desk.csv\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked-diffusion duality workbench"};
    app.require_subcommand(1);
    app.footer(keys_footer());

    Common c_cal, c_ver, c_pre, c_dis, c_sam, c_eva, c_rep;
    std::string k_override, teacher_path, ckpt_path;
    std::string steps_override, count_override;
    std::vector<std::string> student_paths;

    auto* cal = app.add_subcommand("calibrate", "dump (t, gamma, ratio, alpha, sigma) CSV");
    add_common(cal, c_cal);
    cal->add_option("--K", k_override, "shorthand for --set schedule.K=<n>");

    auto* ver = app.add_subcommand("verify", "Monte Carlo duality verification");
    add_common(ver, c_ver);

    auto* pre = app.add_subcommand("pretrain", "generate corpus and pretrain the teacher");
    add_common(pre, c_pre);

    auto* dis = app.add_subcommand("distill", "consistency distillation from a teacher");
    add_common(dis, c_dis);
    dis->add_option("--teacher", teacher_path, "teacher checkpoint (.mcd)")->required();

    auto* sam = app.add_subcommand("sample", "generate sequences from a checkpoint");
    add_common(sam, c_sam);
    sam->add_option("--ckpt", ckpt_path, "model checkpoint (.mcd)")->required();
    sam->add_option("--steps", steps_override, "shorthand for --set sample.steps=<n>");
    sam->add_option("--count", count_override, "shorthand for --set sample.count=<n>");

    auto* eva = app.add_subcommand("eval", "benchmark checkpoints across step counts");
    add_common(eva, c_eva);
    eva->add_option("--teacher", teacher_path, "teacher checkpoint (.mcd)")->required();
    eva->add_option("--student", student_paths, "student checkpoints, one per round")
        ->take_all();

    auto* rep = app.add_subcommand("repro", "pretrain, distill and benchmark end to end");
    add_common(rep, c_rep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e); // prints the message; 0 for --help
        return rc == 0 ? 0 : 1;
    }

    try {
        if (cal->parsed()) {
            if (!k_override.empty()) c_cal.sets.push_back("schedule.K=" + k_override);
            return cmd_calibrate(c_cal);
        }
        if (ver->parsed()) return cmd_verify(c_ver);
        if (pre->parsed()) return cmd_pretrain(c_pre);
        if (dis->parsed()) return cmd_distill(c_dis, teacher_path);
        if (sam->parsed()) {
            if (!steps_override.empty()) c_sam.sets.push_back("sample.steps=" + steps_override);
            if (!count_override.empty()) c_sam.sets.push_back("sample.count=" + count_override);
            return cmd_sample(c_sam, ckpt_path);
        }
        if (eva->parsed()) return cmd_eval(c_eva, teacher_path, student_paths, "eval_report.csv");
        if (rep->parsed()) return cmd_repro(c_rep);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
