#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nsde.hpp"

namespace nsde::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

namespace detail {

inline std::vector<std::size_t> parse_sizes(const std::string& csv) {
    std::vector<std::size_t> out;
    std::stringstream ss(csv);
    for (std::string item; std::getline(ss, item, ',');) {
        if (item.empty()) continue;
        try {
            out.push_back(static_cast<std::size_t>(std::stoull(item)));
        } catch (const std::exception&) {
            throw ValidationError("expected comma-separated integers, got '" + csv + "'");
        }
    }
    return out;
}

inline std::vector<double> parse_reals(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    for (std::string item; std::getline(ss, item, ',');) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ValidationError("expected comma-separated reals, got '" + csv + "'");
        }
    }
    return out;
}

/// SDE_TRAJ_SEED, when set, wins over --seed.
inline std::uint64_t effective_seed(std::uint64_t flag_value) {
    if (const char* env = std::getenv("SDE_TRAJ_SEED"); env && *env) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ValidationError(std::string("SDE_TRAJ_SEED is not an integer: ") + env);
        }
    }
    return flag_value;
}

inline TimeEncoding::Kind encoding_kind(const std::string& s) {
    try {
        return nsde::detail::encoding_from(s);
    } catch (const FormatError& e) {
        throw ValidationError(e.what());
    }
}

inline TrajectorySet load_nonempty(const std::string& path, std::ostream& err) {
    auto set = load_trajectories(path);
    for (const auto& w : set.warnings) err << "warning: " << path << ": " << w << "\n";
    if (set.trajectories.empty()) throw ValidationError(path + ": no trajectories");
    return set;
}

/// Up to max_count states spread evenly over the pooled corpus.
inline std::vector<Vector> probe_subset(const TrajectorySet& set, std::size_t max_count) {
    std::vector<Vector> pooled;
    for (const auto& tr : set.trajectories) pooled.insert(pooled.end(), tr.states.begin(), tr.states.end());
    if (pooled.size() <= max_count) return pooled;
    std::vector<Vector> out;
    for (std::size_t i = 0; i < max_count; ++i) out.push_back(pooled[i * pooled.size() / max_count]);
    return out;
}

inline Vector load_vector_file(const std::string& path, std::size_t dim) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    if (!j.is_array()) throw FormatError(path + ": expected a JSON array of numbers");
    Vector v;
    for (const auto& c : j) {
        if (!c.is_number()) throw FormatError(path + ": expected a JSON array of numbers");
        v.push_back(c.get<double>());
    }
    if (v.size() != dim)
        throw DimensionError(path + ": vector length " + std::to_string(v.size()) +
                             " != model dim " + std::to_string(dim));
    return v;
}

/// Question/answer pairs used by the demo corpus.
inline const std::vector<std::pair<std::string, std::string>>& demo_pairs() {
    static const std::vector<std::pair<std::string, std::string>> pairs{
        {"What is the capital of France", "The capital of France is Paris"},
        {"What is the capital of Italy", "The capital of Italy is Rome"},
        {"What is the capital of Spain", "The capital of Spain is Madrid"},
        {"What is the capital of Japan", "The capital of Japan is Tokyo"},
        {"Which river flows through Paris", "The Seine flows through Paris"},
        {"What language is spoken in France", "French is spoken in France"},
    };
    return pairs;
}

/// One trajectory per pair: mean question embedding followed by the answer tokens.
inline std::vector<EmbeddingTrajectory> demo_corpus(std::size_t dim) {
    std::vector<EmbeddingTrajectory> out;
    for (const auto& [q, a] : demo_pairs()) {
        const auto qe = toy_embed(q, dim);
        const auto ae = toy_embed(a, dim);
        EmbeddingTrajectory tr;
        tr.states.push_back(mean_of(qe.states));
        tr.states.insert(tr.states.end(), ae.states.begin(), ae.states.end());
        std::vector<std::string> tokens{"<question>"};
        tokens.insert(tokens.end(), ae.tokens->begin(), ae.tokens->end());
        tr.tokens = tokens;
        for (std::size_t i = 0; i < tr.states.size(); ++i) tr.times.push_back(static_cast<double>(i));
        out.push_back(std::move(tr));
    }
    return out;
}

}  // namespace detail

/// Runs the command line; args excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    CLI::App app{"Neural SDE modelling of embedding trajectories", "nsde"};
    app.require_subcommand(1);

    // train
    std::string data_path, model_path, out_path, out_dir;
    std::size_t epochs = 50, batch = 64;
    double lr = 1e-2, drift_w = 1.0, diff_w = 1.0, val_frac = 0.0, grad_clip = 5.0;
    std::uint64_t seed = 0;
    bool dim_check = false;
    std::string hidden = "64,64", encoding = "scalar_normalized";
    auto* train = app.add_subcommand("train", "fit drift and diffusion networks to trajectories");
    train->add_option("--data", data_path, "trajectory JSONL file")->required();
    train->add_option("--out", model_path, "output model file")->required();
    train->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
    train->add_option("--lr", lr)->check(CLI::PositiveNumber);
    train->add_option("--batch", batch)->check(CLI::PositiveNumber);
    train->add_option("--seed", seed);
    train->add_flag("--dim-check", dim_check, "validate the data file and report its shape only");
    train->add_option("--drift-weight", drift_w)->check(CLI::NonNegativeNumber);
    train->add_option("--diffusion-weight", diff_w)->check(CLI::NonNegativeNumber);
    train->add_option("--validation-fraction", val_frac);
    train->add_option("--hidden", hidden, "hidden widths, comma separated");
    train->add_option("--grad-clip", grad_clip, "global gradient-norm clip, 0 disables");
    train->add_option("--time-encoding", encoding, "none | scalar_normalized | sinusoidal");

    // simulate
    std::string init_tokens, init_vec;
    std::size_t steps = 6;
    double dt = 1.0;
    auto* sim = app.add_subcommand("simulate", "integrate a trained model forward");
    sim->add_option("--model", model_path)->required();
    auto* init_opt = sim->add_option("--init", init_tokens, "tokens whose mean toy embedding is X(0)");
    auto* vec_opt = sim->add_option("--init-vec", init_vec, "JSON array file holding X(0)");
    init_opt->excludes(vec_opt);
    sim->add_option("--steps", steps)->required()->check(CLI::PositiveNumber);
    sim->add_option("--dt", dt)->check(CLI::PositiveNumber);
    sim->add_option("--seed", seed);
    sim->add_option("--out", out_path)->required();

    // answer
    std::string question;
    auto* answer = app.add_subcommand("answer", "generate an answer trajectory from a question");
    answer->add_option("--model", model_path)->required();
    answer->add_option("--question", question)->required();
    answer->add_option("--steps", steps)->check(CLI::PositiveNumber);
    answer->add_option("--dt", dt)->check(CLI::PositiveNumber);
    answer->add_option("--seed", seed);
    answer->add_option("--out", out_path, "write JSONL here instead of stdout");

    // diagnose
    std::string oracle, mc_source = "model";
    std::size_t paths = 10000, max_probes = 200;
    double t_end = 2.0, mc_dt = 0.01, x0 = 1.0, eval_t = 0.0;
    auto* diag = app.add_subcommand("diagnose", "regularity, stability, moments and prediction checks");
    diag->add_option("--model", model_path)->required();
    diag->add_option("--data", data_path)->required();
    diag->add_option("--out-dir", out_dir)->required();
    diag->add_option("--oracle", oracle, "linear reference a,b for moments.csv");
    diag->add_option("--mc-source", mc_source, "model | oracle: which SDE the Monte Carlo runs")
        ->check(CLI::IsMember({"model", "oracle"}));
    diag->add_option("--paths", paths)->check(CLI::Range(std::size_t{100}, std::size_t{10000000}));
    diag->add_option("--t-end", t_end)->check(CLI::PositiveNumber);
    diag->add_option("--dt", mc_dt)->check(CLI::PositiveNumber);
    diag->add_option("--x0", x0, "initial value of every component for Monte Carlo");
    diag->add_option("--probes", max_probes)->check(CLI::Range(std::size_t{2}, std::size_t{100000}));
    diag->add_option("--t", eval_t, "time at which coefficients are probed");
    diag->add_option("--seed", seed);

    // field
    std::size_t res = 20;
    auto* field = app.add_subcommand("field", "drift vector field and diffusion magnitude on a PCA plane");
    field->add_option("--model", model_path)->required();
    field->add_option("--data", data_path)->required();
    field->add_option("--res", res)->check(CLI::Range(std::size_t{2}, std::size_t{10000}));
    field->add_option("--t", eval_t);
    field->add_option("--out", out_path)->required();

    // importance
    std::size_t index = 0;
    auto* imp = app.add_subcommand("importance", "L2 norm of every token embedding");
    imp->add_option("--data", data_path)->required();
    imp->add_option("--index", index, "which trajectory of the file");
    imp->add_option("--out", out_path)->required();

    // losses
    auto* losses = app.add_subcommand("losses", "export the training loss history");
    losses->add_option("--model", model_path)->required();
    losses->add_option("--out", out_path)->required();

    // synth-ou
    std::size_t n_traj = 2000, dim = 1;
    std::size_t synth_steps = 50;
    double a = -1.0, b = 0.5, x0_lo = -2.0, x0_hi = 2.0, synth_dt = 0.02;
    auto* synth = app.add_subcommand("synth-ou", "write Ornstein-Uhlenbeck trajectories");
    synth->add_option("--out", out_path)->required();
    synth->add_option("--n", n_traj)->check(CLI::PositiveNumber);
    synth->add_option("--steps", synth_steps)->check(CLI::PositiveNumber);
    synth->add_option("--dt", synth_dt)->check(CLI::PositiveNumber);
    synth->add_option("--a", a);
    synth->add_option("--b", b)->check(CLI::NonNegativeNumber);
    synth->add_option("--dim", dim)->check(CLI::PositiveNumber);
    synth->add_option("--x0-min", x0_lo);
    synth->add_option("--x0-max", x0_hi);
    synth->add_option("--seed", seed);

    // demo-data
    auto* demo = app.add_subcommand("demo-data", "write the toy question/answer corpus");
    demo->add_option("--out", out_path)->required();
    demo->add_option("--dim", dim)->check(CLI::PositiveNumber);

    std::vector<std::string> argv_store{"nsde"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_store) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitValidation;
    }

    try {
        if (*train) {
            const auto set = detail::load_nonempty(data_path, err);
            if (dim_check) {
                out << "records " << set.trajectories.size() << " dim "
                    << set.trajectories.front().dim() << "\n";
                return kExitOk;
            }
            TrainingConfig cfg;
            cfg.epochs = epochs;
            cfg.batch_size = batch;
            cfg.learning_rate = lr;
            cfg.drift_weight = drift_w;
            cfg.diffusion_weight = diff_w;
            cfg.seed = detail::effective_seed(seed);
            cfg.validation_fraction = val_frac;
            cfg.grad_clip = grad_clip > 0 ? std::optional<double>(grad_clip) : std::nullopt;
            cfg.hidden_layers = detail::parse_sizes(hidden);
            cfg.time_encoding = detail::encoding_kind(encoding);
            auto result = fit(set.trajectories, cfg);
            const auto& last = result.history.back();
            save_model(model_path, ModelFile{std::move(result.model), cfg, result.history});
            out << "trained " << cfg.epochs << " epochs; final " << to_string(last.split)
                << " total " << format_number(last.total) << "\n";
            return kExitOk;
        }

        if (*sim) {
            const auto mf = load_model(model_path);
            const std::size_t d = mf.model.dim();
            Vector start;
            if (!init_vec.empty()) {
                start = detail::load_vector_file(init_vec, d);
            } else if (!init_tokens.empty()) {
                start = mean_of(toy_embed(init_tokens, d).states);
            } else {
                throw ValidationError("simulate: one of --init or --init-vec is required");
            }
            const auto traj = simulate(mf.model, start, steps, dt, detail::effective_seed(seed));
            const std::vector<EmbeddingTrajectory> one{traj};
            const std::vector<std::string> ids{"simulated"};
            save_trajectories(out_path, one, ids);
            return kExitOk;
        }

        if (*answer) {
            const auto mf = load_model(model_path);
            const auto q = toy_embed(question, mf.model.dim());
            auto traj = generate_answer(mf.model, q.states, steps, dt, detail::effective_seed(seed));
            const std::vector<EmbeddingTrajectory> one{traj};
            const std::vector<std::string> ids{"answer"};
            const std::string text = serialize_trajectories(one, ids);
            if (out_path.empty()) out << text;
            else write_file_atomic(out_path, text);
            return kExitOk;
        }

        if (*diag) {
            const auto mf = load_model(model_path);
            const auto set = detail::load_nonempty(data_path, err);
            const auto& model = mf.model;
            if (set.trajectories.front().dim() != model.dim())
                throw DimensionError("diagnose: data dim != model dim");
            const std::filesystem::path dir(out_dir);
            const auto probes = detail::probe_subset(set, max_probes);

            json report;
            if (probes.size() >= 2) {
                const auto reg = estimate_regularity(model, probes, eval_t);
                report["regularity"] = {{"lipschitz_K", reg.lipschitz_K},
                                        {"growth_C", reg.growth_C},
                                        {"n_probe_pairs", reg.n_probe_pairs}};
            }
            const auto lyap = lyapunov_check(model, Matrix::identity(model.dim()), probes, eval_t);
            report["lyapunov"] = {{"max_generator", lyap.max_generator},
                                  {"stable", lyap.stable_flag},
                                  {"n_probes", probes.size()}};

            std::vector<TrajectoryComparison> comparisons;
            std::vector<EmbeddingTrajectory> compared;
            std::vector<std::string> compared_ids;
            double err_sum = 0.0, zero_sum = 0.0;
            std::size_t n_err = 0;
            for (std::size_t k = 0; k < set.trajectories.size(); ++k) {
                const auto& tr = set.trajectories[k];
                if (tr.size() < 2) continue;
                comparisons.push_back(compare_trajectories(tr, model));
                for (std::size_t i = 0; i + 1 < tr.size(); ++i) {
                    err_sum += comparisons.back().per_step_errors[i];
                    zero_sum += norm(tr.states[i + 1] - tr.states[i]);
                    ++n_err;
                }
                compared.push_back(tr);
                compared_ids.push_back(set.ids[k]);
            }
            if (n_err > 0) {
                report["trajectory_comparison"] = {
                    {"mean_step_error", err_sum / static_cast<double>(n_err)},
                    {"zero_drift_mean_step_error", zero_sum / static_cast<double>(n_err)}};
                std::vector<Vector> pooled;
                for (const auto& tr : compared) pooled.insert(pooled.end(), tr.states.begin(), tr.states.end());
                const PcaFit plane = pca_fit(pooled, std::min<std::size_t>(2, model.dim()));
                trajectory_compare_csv(comparisons, compared, compared_ids, plane)
                    .save(dir / "trajectory_compare.csv");
            }
            heatmap_csv(uncertainty_heatmap(model, set.trajectories.front())).save(dir / "heatmap.csv");

            if (!oracle.empty()) {
                const auto ab = detail::parse_reals(oracle);
                if (ab.size() != 2) throw ValidationError("--oracle expects a,b");
                const LinearSdeSpec spec(ab[0], ab[1], model.dim());
                const std::size_t n_int = static_cast<std::size_t>(std::llround(t_end / mc_dt));
                if (n_int == 0) throw ValidationError("--t-end must be at least one --dt");
                const auto grid = uniform_grid(0.0, static_cast<double>(n_int) * mc_dt, n_int);
                MonteCarloOptions opts;
                opts.reference = spec;
                const Vector start(model.dim(), x0);
                const std::uint64_t s = detail::effective_seed(seed);
                const auto rep = mc_source == "oracle"
                                     ? moment_monte_carlo(spec, start, 0.0, grid, paths, s, opts)
                                     : moment_monte_carlo(model, start, 0.0, grid, paths, s, opts);
                moments_csv(rep).save(dir / "moments.csv");
                report["moments"] = {{"mc_source", mc_source},
                                     {"n_paths", paths},
                                     {"final_mean_mc", rep.mean_mc.back()},
                                     {"final_mean_ode", rep.mean_ode.back()},
                                     {"final_var_mc", rep.var_mc.back()},
                                     {"final_var_ode", rep.var_ode.back()}};
            }
            write_file_atomic(dir / "report.json", report.dump(2) + "\n");
            out << report.dump(2) << "\n";
            return kExitOk;
        }

        if (*field) {
            const auto mf = load_model(model_path);
            const auto set = detail::load_nonempty(data_path, err);
            vector_field_csv(drift_vector_field(mf.model, set.trajectories, res, eval_t)).save(out_path);
            return kExitOk;
        }

        if (*imp) {
            const auto set = detail::load_nonempty(data_path, err);
            if (index >= set.trajectories.size())
                throw ValidationError("--index " + std::to_string(index) + " out of range");
            const auto wi = word_importance(set.trajectories[index]);
            if (wi.positional_labels)
                err << "warning: trajectory has no tokens; using positions as labels\n";
            importance_csv(wi).save(out_path);
            return kExitOk;
        }

        if (*losses) {
            const auto mf = load_model(model_path);
            losses_csv(mf.loss_history).save(out_path);
            return kExitOk;
        }

        if (*synth) {
            if (x0_hi < x0_lo) throw ValidationError("--x0-max must be >= --x0-min");
            const LinearSdeSpec spec(a, b, dim);
            const std::uint64_t s = detail::effective_seed(seed);
            RngStream starts(s);
            std::vector<EmbeddingTrajectory> trajs;
            for (std::size_t i = 0; i < n_traj; ++i) {
                Vector start(dim);
                for (auto& v : start) v = starts.uniform(x0_lo, x0_hi);
                trajs.push_back(simulate(spec, start, synth_steps, synth_dt, path_seed(s, i + 1)));
            }
            save_trajectories(out_path, trajs);
            return kExitOk;
        }

        if (*demo) {
            const auto corpus = detail::demo_corpus(dim);
            std::vector<std::string> ids;
            for (std::size_t i = 0; i < corpus.size(); ++i) ids.push_back("qa" + std::to_string(i));
            save_trajectories(out_path, corpus, ids);
            return kExitOk;
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitValidation;
}

}  // namespace nsde::cli
