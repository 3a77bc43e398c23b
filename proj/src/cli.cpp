#include "protoform/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "protoform/analysis.hpp"
#include "protoform/data.hpp"
#include "protoform/errors.hpp"
#include "protoform/gradcheck.hpp"
#include "protoform/train.hpp"

namespace protoform {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Bad flag/config values detected after CLI11 parsing; mapped to exit 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::size_t worker_threads() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("PROTOFORM_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
    }
    return n;
}

struct TrainFlags {
    std::string config_path;
    std::string formulation = "euclidean";
    std::string data;
    std::string test_data;
    std::string out = "run";
    std::size_t epochs = 30;
    std::uint64_t seed = 0;
    double lr = 1e-4;
    double wd = 1e-4;
    std::size_t batch = 48;
    std::size_t q = 10;
    std::size_t dim = 128;
    std::size_t hidden = 0;
    std::size_t mixture_k = 3;
    double lambda_clst = 0.8;
    double lambda_sep = 0.08;
    bool freeze_neck = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool need_data) {
    cmd->add_option("--config", f.config_path,
                    "flat key=value config file; explicit flags override it");
    cmd->add_option("--formulation", f.formulation, "prototype formulation")
        ->check(CLI::IsMember(formulation_tags()))
        ->capture_default_str();
    auto* data = cmd->add_option(
        "--data", f.data, "embeddings: a .emb file or a directory with train.emb/test.emb");
    if (need_data) data->required();
    cmd->add_option("--test-data", f.test_data,
                    "test .emb file (defaults to the sibling test.emb or an 80/20 split)");
    cmd->add_option("--epochs", f.epochs, "training epochs")->capture_default_str();
    cmd->add_option("--seed", f.seed, "RNG seed")->capture_default_str();
    cmd->add_option("--lr", f.lr, "AdamW learning rate")->capture_default_str();
    cmd->add_option("--wd", f.wd, "AdamW weight decay")->capture_default_str();
    cmd->add_option("--batch", f.batch, "minibatch size")->capture_default_str();
    cmd->add_option("--q", f.q, "prototypes per class")->capture_default_str();
    cmd->add_option("--dim", f.dim, "prototype dimensionality D")->capture_default_str();
    cmd->add_option("--hidden", f.hidden, "neck hidden width (0 = d_in/2)")
        ->capture_default_str();
    cmd->add_option("--mixture-k", f.mixture_k, "mixture components per prototype")
        ->capture_default_str();
    cmd->add_option("--lambda-clst", f.lambda_clst, "cluster loss weight")->capture_default_str();
    cmd->add_option("--lambda-sep", f.lambda_sep, "separation loss weight")
        ->capture_default_str();
    cmd->add_flag("--freeze-neck", f.freeze_neck, "keep the neck at its random initialization");
    cmd->add_option("--out", f.out, "run directory; all outputs land here")
        ->capture_default_str();
}

// Applies flat key=value config entries for options the command line did not
// set. Keys mirror the flag names. Unknown keys are rejected.
void apply_config_file(const CLI::App* cmd, TrainFlags& f) {
    if (f.config_path.empty()) return;
    std::ifstream in(f.config_path);
    if (!in) throw UsageError("cannot open config file " + f.config_path);

    const auto trim = [](std::string s) {
        const auto first = s.find_first_not_of(" \t\r");
        const auto last = s.find_last_not_of(" \t\r");
        return first == std::string::npos ? std::string() : s.substr(first, last - first + 1);
    };
    const auto truthy = [](const std::string& v) {
        return v == "1" || v == "true" || v == "yes" || v == "on";
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config line " + std::to_string(line_no) + ": expected key=value");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (cmd->count("--" + key) > 0) continue;  // explicit flags win

        try {
            if (key == "formulation") {
                f.formulation = value;
            } else if (key == "data") {
                f.data = value;
            } else if (key == "test-data") {
                f.test_data = value;
            } else if (key == "out") {
                f.out = value;
            } else if (key == "epochs") {
                f.epochs = std::stoull(value);
            } else if (key == "seed") {
                f.seed = std::stoull(value);
            } else if (key == "lr") {
                f.lr = std::stod(value);
            } else if (key == "wd") {
                f.wd = std::stod(value);
            } else if (key == "batch") {
                f.batch = std::stoull(value);
            } else if (key == "q") {
                f.q = std::stoull(value);
            } else if (key == "dim") {
                f.dim = std::stoull(value);
            } else if (key == "hidden") {
                f.hidden = std::stoull(value);
            } else if (key == "mixture-k") {
                f.mixture_k = std::stoull(value);
            } else if (key == "lambda-clst") {
                f.lambda_clst = std::stod(value);
            } else if (key == "lambda-sep") {
                f.lambda_sep = std::stod(value);
            } else if (key == "freeze-neck") {
                f.freeze_neck = truthy(value);
            } else {
                throw UsageError("config line " + std::to_string(line_no) + ": unknown key '" +
                                 key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw UsageError("config line " + std::to_string(line_no) + ": bad value for '" +
                             key + "'");
        }
    }
}

TrainConfig to_train_config(const TrainFlags& f) {
    TrainConfig cfg;
    const auto formulation = parse_formulation(f.formulation);
    if (!formulation) {
        std::string tags;
        for (const auto& t : formulation_tags()) tags += (tags.empty() ? "" : ", ") + t;
        throw UsageError("unknown formulation '" + f.formulation + "'; valid: " + tags);
    }
    cfg.formulation = *formulation;
    cfg.lr = f.lr;
    cfg.weight_decay = f.wd;
    cfg.batch_size = f.batch;
    cfg.epochs = f.epochs;
    cfg.seed = f.seed;
    cfg.weights.lambda_clst = f.lambda_clst;
    cfg.weights.lambda_sep = f.lambda_sep;
    cfg.per_class = f.q;
    cfg.dim = f.dim;
    cfg.d_hidden = f.hidden;
    cfg.mixture_components = f.mixture_k;
    cfg.freeze_neck = f.freeze_neck;
    return cfg;
}

DatasetSplits resolve_data(const TrainFlags& f) {
    const fs::path path(f.data);
    if (fs::is_directory(path)) {
        DatasetSplits splits;
        splits.train = load_embeddings((path / "train.emb").string());
        splits.test = load_embeddings((path / "test.emb").string());
        return splits;
    }
    if (!f.test_data.empty()) {
        DatasetSplits splits;
        splits.train = load_embeddings(f.data);
        splits.test = load_embeddings(f.test_data);
        return splits;
    }
    // single file: deterministic stratified 80/20 split
    return split_dataset(load_embeddings(f.data), f.seed ^ 0x73706c6974ULL);
}

fs::path prepare_out(const std::string& out) {
    fs::path dir(out);
    fs::create_directories(dir);
    return dir;
}

int cmd_gen_data(const std::string& kind, SyntheticSpec spec, const std::string& out) {
    spec.kind = kind == "blobs" ? SyntheticKind::EuclideanBlobs : SyntheticKind::HypersphericalVmf;
    const auto splits = generate(spec);
    const auto dir = prepare_out(out);
    save_embeddings(splits.train, (dir / "train.emb").string());
    save_embeddings(splits.test, (dir / "test.emb").string());
    write_stats_csv(splits, (dir / "stats.csv").string());
    std::cout << "wrote " << splits.train.size() << " train / " << splits.test.size()
              << " test records to " << dir.string() << "\n";
    return kExitOk;
}

int cmd_train(const TrainFlags& flags) {
    const auto splits = resolve_data(flags);
    const auto cfg = to_train_config(flags);
    const auto result = train(splits.train, splits.test, cfg);
    const auto dir = prepare_out(flags.out);
    write_report_csv(result.report, (dir / "report.csv").string());
    save_checkpoint(result.model, (dir / "model.ckpt").string());

    json summary;
    summary["formulation"] = flags.formulation;
    summary["epochs"] = cfg.epochs;
    summary["seed"] = cfg.seed;
    summary["lr"] = cfg.lr;
    summary["weight_decay"] = cfg.weight_decay;
    summary["batch"] = cfg.batch_size;
    summary["q"] = cfg.per_class;
    summary["dim"] = cfg.dim;
    summary["lambda_clst"] = cfg.weights.lambda_clst;
    summary["lambda_sep"] = cfg.weights.lambda_sep;
    summary["freeze_neck"] = cfg.freeze_neck;
    summary["final_test_acc"] = result.report.final_test_acc;
    summary["wall_seconds"] = result.report.wall_seconds;
    char checksum[32];
    std::snprintf(checksum, sizeof(checksum), "%016llx",
                  static_cast<unsigned long long>(result.report.params_checksum));
    summary["params_checksum"] = checksum;
    std::ofstream(dir / "summary.json") << summary.dump(2) << "\n";

    std::cout << "final test accuracy " << result.report.final_test_acc << " (report in "
              << dir.string() << ")\n";
    return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_path) {
    const auto params = load_checkpoint(model_path);
    const auto dataset = load_embeddings(data_path);
    std::cout << "top1 " << evaluate_top1(params, dataset) << "\n";
    return kExitOk;
}

int cmd_sweep(const TrainFlags& flags, const std::string& axis,
              const std::vector<std::size_t>& values, const std::vector<std::uint64_t>& seeds) {
    const auto splits = resolve_data(flags);
    const auto base = to_train_config(flags);
    const auto sweep_axis =
        axis == "q" ? SweepAxis::PrototypesPerClass : SweepAxis::Dimensions;
    const auto result = run_sweep(sweep_axis, values, base, splits, seeds, worker_threads());
    const auto dir = prepare_out(flags.out);
    write_sweep_csv(result, (dir / "sweep.csv").string(), (dir / "sweep_summary.csv").string());
    for (const auto& agg : result.aggregates) {
        std::cout << agg.formulation << " " << axis << "=" << agg.axis_value << " acc "
                  << agg.mean_acc << " +/- " << agg.std_acc << "\n";
    }
    return kExitOk;
}

int cmd_gradcheck(bool all, const std::string& formulation, std::size_t points,
                  std::uint64_t seed, std::size_t dim, double tol) {
    std::vector<GradCheckRow> rows;
    if (all) {
        rows = gradcheck_all(points, seed, dim);
    } else {
        const auto f = parse_formulation(formulation);
        rows.push_back(gradcheck_formulation(*f, dim, points, seed));
        rows.back().name = formulation;
    }
    bool ok = true;
    std::printf("%-22s %12s  %s\n", "formulation", "max_rel_err", "status");
    for (const auto& row : rows) {
        const bool pass = row.max_rel_err < tol;
        ok = ok && pass;
        std::printf("%-22s %12.3e  %s\n", row.name.c_str(), row.max_rel_err,
                    pass ? "ok" : "FAIL");
    }
    return ok ? kExitOk : kExitRuntime;
}

int cmd_sphere(const std::string& formulation, double mu, double sigma, double kappa, double beta,
               std::size_t n_lat, std::size_t n_lon, const std::string& model_path,
               std::size_t proto_index, const std::string& out) {
    Prototype proto = CosineProto{{0.0, 0.0, 1.0}};
    if (!model_path.empty()) {
        const auto params = load_checkpoint(model_path);
        if (proto_index >= params.bank.num_prototypes()) {
            throw ConfigError("sphere: prototype index out of range");
        }
        proto = params.bank.cell(proto_index, 0);
    } else {
        const Vec anchor = {0.0, 0.0, 1.0};
        const auto f = *parse_formulation(formulation);
        switch (f) {
            case Formulation::Cosine:
                proto = CosineProto{anchor};
                break;
            case Formulation::HyperPG:
            case Formulation::HyperPGCauchy:
            case Formulation::HyperPGTruncCauchy: {
                HyperPGProto p;
                p.anchor = anchor;
                p.mu = mu;
                p.raw_sigma = std::log(std::expm1(sigma - kSigmaFloor));
                p.family = formulation_family(f);
                proto = p;
                break;
            }
            case Formulation::Vmf: {
                VmfProto p;
                p.anchor = anchor;
                p.log_kappa = std::log(kappa);
                proto = p;
                break;
            }
            case Formulation::FisherBingham: {
                FisherBinghamProto p;
                p.dim = 3;
                p.axes = {0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
                p.log_kappa = std::log(kappa);
                p.beta = {beta, 1.0 - beta};
                proto = p;
                break;
            }
            default:
                throw ConfigError(
                    "sphere: formulation not defined on the sphere; supported: cosine, "
                    "hyperpg, hyperpg-cauchy, hyperpg-trunc-gauss, hyperpg-trunc-cauchy, "
                    "vmf, fb");
        }
    }
    const auto grid = sphere_activation_grid(proto, n_lat, n_lon);
    const auto dir = prepare_out(out);
    write_sphere_csv(grid, (dir / "sphere.csv").string());
    std::cout << "wrote " << (dir / "sphere.csv").string() << "\n";
    return kExitOk;
}

int cmd_scatter(const std::string& model_path, const std::string& out) {
    const auto params = load_checkpoint(model_path);
    const auto points = param_scatter(params);
    const auto dir = prepare_out(out);
    write_scatter_csv(points, (dir / "scatter.csv").string());
    std::cout << "wrote " << points.size() << " rows to " << (dir / "scatter.csv").string()
              << "\n";
    return kExitOk;
}

int cmd_nearest(const std::string& model_path, const std::string& data_path,
                std::size_t proto_index, std::size_t k, const std::string& out) {
    const auto params = load_checkpoint(model_path);
    const auto dataset = load_embeddings(data_path);
    const auto hits = nearest_patches(params, dataset, proto_index, k);
    const auto dir = prepare_out(out);
    std::ofstream csv(dir / "nearest.csv");
    csv << "record,cell_x,cell_y,similarity\n";
    for (const auto& h : hits) {
        char line[160];
        std::snprintf(line, sizeof(line), "%zu,%zu,%zu,%.10g\n", h.record, h.cell_x, h.cell_y,
                      h.similarity);
        csv << line;
        std::cout << line;
    }
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"prototype formulation benchmark: point-based and probabilistic prototypes "
                 "inside a small trainable prototypical-part classifier"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);
    app.footer("File formats:\n"
               "  embeddings (.emb): magic \"PROTOEMB1\", little-endian u32 N, C, zeta_w,\n"
               "    zeta_h, d_in, then N records of (u32 label, zeta*d_in float32 features,\n"
               "    row-major spatial then channel).\n"
               "  checkpoints (.ckpt): magic \"PROTOFORM1\"; see README.md for the header\n"
               "    and the flat float64 parameter layout.\n"
               "Environment: PROTOFORM_THREADS caps sweep worker threads.");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic embedding dataset");
    std::string gen_kind = "blobs";
    std::string gen_out = "data";
    SyntheticSpec spec;
    gen->add_option("--kind", gen_kind, "dataset kind")
        ->check(CLI::IsMember({"blobs", "hypersphere"}))
        ->capture_default_str();
    gen->add_option("--classes", spec.num_classes, "number of classes")->capture_default_str();
    gen->add_option("--per-class", spec.per_class, "records per class")->capture_default_str();
    gen->add_option("--din", spec.d_in, "input feature depth")->capture_default_str();
    gen->add_option("--zeta-w", spec.zeta_w, "feature grid width")->capture_default_str();
    gen->add_option("--zeta-h", spec.zeta_h, "feature grid height")->capture_default_str();
    gen->add_option("--spread", spec.center_spread, "blob center spread")->capture_default_str();
    gen->add_option("--noise", spec.noise, "blob noise std")->capture_default_str();
    gen->add_option("--kappa-gen", spec.kappa_gen, "hypersphere concentration")
        ->capture_default_str();
    gen->add_option("--norm-min", spec.norm_min, "record norm lower bound")
        ->capture_default_str();
    gen->add_option("--norm-max", spec.norm_max, "record norm upper bound")
        ->capture_default_str();
    gen->add_option("--seed", spec.seed, "RNG seed")->capture_default_str();
    gen->add_option("--out", gen_out, "output directory")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "train one model and write report/checkpoint");
    TrainFlags train_flags;
    add_train_flags(train_cmd, train_flags, /*need_data=*/true);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_model, eval_data;
    eval_cmd->add_option("--model", eval_model, "checkpoint path")->required();
    eval_cmd->add_option("--data", eval_data, "embeddings (.emb)")->required();
    std::uint64_t eval_seed = 0;
    eval_cmd->add_option("--seed", eval_seed, "accepted for uniformity; deterministic");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "ablation sweep over Q or D");
    TrainFlags sweep_flags;
    add_train_flags(sweep_cmd, sweep_flags, /*need_data=*/true);
    std::string sweep_axis = "q";
    std::vector<std::size_t> sweep_values = {1, 2, 5, 10};
    std::vector<std::uint64_t> sweep_seeds = {0, 1, 2};
    sweep_cmd->add_option("--axis", sweep_axis, "sweep axis")
        ->check(CLI::IsMember({"q", "dim"}))
        ->capture_default_str();
    sweep_cmd->add_option("--values", sweep_values, "axis values")->delimiter(',');
    sweep_cmd->add_option("--seeds", sweep_seeds, "seeds to average over")->delimiter(',');

    // gradcheck
    auto* grad_cmd =
        app.add_subcommand("gradcheck", "verify analytic gradients against finite differences");
    bool grad_all = false;
    std::string grad_formulation = "euclidean";
    std::size_t grad_points = 100, grad_dim = 8;
    std::uint64_t grad_seed = 0;
    double grad_tol = 1e-4;
    grad_cmd->add_flag("--all", grad_all, "check every formulation tag");
    grad_cmd->add_option("--formulation", grad_formulation, "single formulation to check")
        ->check(CLI::IsMember(formulation_tags()));
    grad_cmd->add_option("--points", grad_points, "random points per formulation")
        ->capture_default_str();
    grad_cmd->add_option("--dim", grad_dim, "prototype dimensionality")->capture_default_str();
    grad_cmd->add_option("--seed", grad_seed, "RNG seed")->capture_default_str();
    grad_cmd->add_option("--tol", grad_tol, "max allowed relative error")->capture_default_str();

    // sphere
    auto* sphere_cmd =
        app.add_subcommand("sphere", "activation grid of a prototype on the 3-D unit sphere");
    std::string sphere_formulation = "hyperpg";
    std::string sphere_model, sphere_out = "run";
    double sphere_mu = 1.0, sphere_sigma = 0.1, sphere_kappa = 10.0, sphere_beta = 0.5;
    std::size_t sphere_lat = 181, sphere_lon = 360, sphere_proto = 0;
    sphere_cmd->add_option("--formulation", sphere_formulation, "prototype formulation")
        ->check(CLI::IsMember(formulation_tags()))
        ->capture_default_str();
    sphere_cmd->add_option("--mu", sphere_mu, "hyperpg mean similarity")->capture_default_str();
    sphere_cmd->add_option("--sigma", sphere_sigma, "hyperpg std")->capture_default_str();
    sphere_cmd->add_option("--kappa", sphere_kappa, "vmf/fb concentration")
        ->capture_default_str();
    sphere_cmd->add_option("--beta", sphere_beta, "fb first ellipticity factor")
        ->capture_default_str();
    sphere_cmd->add_option("--lat", sphere_lat, "latitude resolution")->capture_default_str();
    sphere_cmd->add_option("--lon", sphere_lon, "longitude resolution")->capture_default_str();
    sphere_cmd->add_option("--model", sphere_model, "take the prototype from this checkpoint");
    sphere_cmd->add_option("--proto", sphere_proto, "prototype index within --model")
        ->capture_default_str();
    std::uint64_t unused_seed = 0;
    sphere_cmd->add_option("--seed", unused_seed, "accepted for uniformity; deterministic");
    sphere_cmd->add_option("--out", sphere_out, "output directory")->capture_default_str();

    // scatter
    auto* scatter_cmd =
        app.add_subcommand("scatter", "learned (mu, sigma) pairs of a HyperPG checkpoint");
    std::string scatter_model, scatter_out = "run";
    scatter_cmd->add_option("--model", scatter_model, "checkpoint path")->required();
    scatter_cmd->add_option("--out", scatter_out, "output directory")->capture_default_str();
    std::uint64_t scatter_seed = 0;
    scatter_cmd->add_option("--seed", scatter_seed, "accepted for uniformity; deterministic");

    // nearest
    auto* nearest_cmd =
        app.add_subcommand("nearest", "nearest training patches for one prototype");
    std::string nearest_model, nearest_data, nearest_out = "run";
    std::size_t nearest_proto = 0, nearest_k = 3;
    nearest_cmd->add_option("--model", nearest_model, "checkpoint path")->required();
    nearest_cmd->add_option("--data", nearest_data, "embeddings (.emb)")->required();
    nearest_cmd->add_option("--proto", nearest_proto, "prototype index")->capture_default_str();
    nearest_cmd->add_option("--k", nearest_k, "patches to return")->capture_default_str();
    nearest_cmd->add_option("--out", nearest_out, "output directory")->capture_default_str();
    std::uint64_t nearest_seed = 0;
    nearest_cmd->add_option("--seed", nearest_seed, "accepted for uniformity; deterministic");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_kind, spec, gen_out);
        if (train_cmd->parsed()) {
            apply_config_file(train_cmd, train_flags);
            return cmd_train(train_flags);
        }
        if (eval_cmd->parsed()) return cmd_eval(eval_model, eval_data);
        if (sweep_cmd->parsed()) {
            apply_config_file(sweep_cmd, sweep_flags);
            return cmd_sweep(sweep_flags, sweep_axis, sweep_values, sweep_seeds);
        }
        if (grad_cmd->parsed()) {
            return cmd_gradcheck(grad_all, grad_formulation, grad_points, grad_seed, grad_dim,
                                 grad_tol);
        }
        if (sphere_cmd->parsed()) {
            return cmd_sphere(sphere_formulation, sphere_mu, sphere_sigma, sphere_kappa,
                              sphere_beta, sphere_lat, sphere_lon, sphere_model, sphere_proto,
                              sphere_out);
        }
        if (scatter_cmd->parsed()) return cmd_scatter(scatter_model, scatter_out);
        if (nearest_cmd->parsed()) {
            return cmd_nearest(nearest_model, nearest_data, nearest_proto, nearest_k, nearest_out);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace protoform
