// ugac: train / translate / perturb / evaluate / uncertainty-corr pipelines
// for unpaired image translation with per-pixel uncertainty.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ugac/data.hpp"
#include "ugac/errors.hpp"
#include "ugac/io.hpp"
#include "ugac/metrics.hpp"
#include "ugac/perturb.hpp"
#include "ugac/plot.hpp"
#include "ugac/train.hpp"
#include "ugac/uncertainty.hpp"
#include "ugac/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes: 0 success, 1 usage, 2 data, 3 numerical/internal.
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

/// Collects the run description and writes manifest.json atomically at the
/// end; every listed artifact is checked to exist.
class Manifest {
public:
    Manifest(std::string command, const fs::path& out_dir)
        : out_dir_(out_dir), started_(iso_timestamp()) {
        j_["command"] = std::move(command);
        j_["version"] = ugac::kVersion;
    }

    json& meta() { return j_; }

    void add_artifact(const fs::path& p) { artifacts_.push_back(p.string()); }

    void write() {
        for (const auto& a : artifacts_)
            if (!fs::exists(a)) throw ugac::DataError("manifest lists missing artifact " + a);
        j_["started_at"] = started_;
        j_["finished_at"] = iso_timestamp();
        j_["artifacts"] = artifacts_;
        ugac::io::AtomicFile f(out_dir_ / "manifest.json");
        f.stream() << j_.dump(2) << "\n";
        f.commit();
    }

private:
    fs::path out_dir_;
    std::string started_;
    json j_;
    std::vector<std::string> artifacts_;
};

std::string stem_of(const std::string& filename) {
    return fs::path(filename).stem().string();
}

void write_text(const fs::path& path, const std::string& text) {
    ugac::io::AtomicFile f(path);
    f.stream() << text;
    f.commit();
}

ugac::train::Trainer load_trainer(const std::string& ckpt) {
    if (!fs::exists(ckpt)) throw ugac::DataError("checkpoint not found: " + ckpt);
    return ugac::train::Trainer::load_checkpoint(ckpt);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config, data_dir, out_dir;
    int synth = 0;
    int epochs = -1;
    long long seed = -1;
    int size = -1;
};

int cmd_train(const TrainArgs& a) {
    ugac::train::TrainConfig cfg;
    if (!a.config.empty()) {
        if (!fs::exists(a.config))
            throw UsageError("config file not found: " + a.config);
        cfg = ugac::train::parse_config_file(a.config);
    }
    if (a.epochs > 0) cfg.epochs = a.epochs;
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
    if (a.size > 0) cfg.image_size = a.size;
    if ((a.synth > 0) == !a.data_dir.empty())
        throw UsageError("exactly one of --data or --synth is required");

    const fs::path out(a.out_dir);
    fs::create_directories(out);
    Manifest manifest("train", out);
    manifest.meta()["seed"] = cfg.seed;
    manifest.meta()["config"] = ugac::train::config_to_json(cfg);

    ugac::data::UnpairedDataset ds;
    if (a.synth > 0) {
        ds = ugac::data::synth_shapes_dataset(static_cast<std::size_t>(a.synth),
                                              static_cast<std::size_t>(cfg.image_size),
                                              cfg.seed);
        // Persist the generated dataset so translate/perturb/evaluate can
        // run on files.
        for (const char* sub : {"domainA", "domainB"})
            fs::create_directories(out / "dataset" / sub);
        char name[32];
        for (std::size_t i = 0; i < ds.domain_a.size(); ++i) {
            std::snprintf(name, sizeof(name), "img%04zu.rt", i);
            ugac::io::save_tensor_raw(out / "dataset" / "domainA" / name, ds.domain_a[i]);
            ugac::io::save_tensor_raw(out / "dataset" / "domainB" / name, ds.domain_b[i]);
        }
        manifest.meta()["dataset"] = (out / "dataset").string();
    } else {
        ds = ugac::data::load_dataset(a.data_dir);
    }

    ugac::train::Trainer trainer(cfg);
    auto logs = trainer.fit(ds, out);

    write_text(out / "config.echo", ugac::train::config_echo(cfg));
    manifest.meta()["epochs_run"] = logs.size();
    manifest.add_artifact(out / "metrics.csv");
    manifest.add_artifact(out / "ckpt_final.ugck");
    manifest.add_artifact(out / "config.echo");
    manifest.write();
    std::cout << "trained " << logs.size() << " epochs; final loss_g="
              << (logs.empty() ? 0.0 : logs.back().loss_g) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// translate
// ---------------------------------------------------------------------------

struct TranslateArgs {
    std::string ckpt, in_dir, out_dir, direction = "a2b";
    bool uncertainty = false;
    bool png = false;
};

int cmd_translate(const TranslateArgs& a) {
    auto trainer = load_trainer(a.ckpt);
    const auto& g = a.direction == "a2b" ? trainer.g_a() : trainer.g_b();
    auto images = ugac::data::load_images(a.in_dir);
    if (images.empty()) throw ugac::DataError("no input images in " + a.in_dir);

    const fs::path out(a.out_dir);
    fs::create_directories(out);
    Manifest manifest("translate", out);
    manifest.meta()["checkpoint"] = a.ckpt;
    manifest.meta()["direction"] = a.direction;
    manifest.meta()["uncertainty"] = a.uncertainty;

    for (const auto& [name, img] : images) {
        const std::string stem = stem_of(name);
        auto maps = ugac::train::translate_image(g, img);
        const fs::path mean_path = out / (stem + "_mean.rt");
        ugac::io::save_tensor_raw(mean_path, maps.mean);
        manifest.add_artifact(mean_path);
        if (a.png) ugac::data::save_png(out / (stem + "_mean.png"), maps.mean);
        if (a.uncertainty) {
            ugac::Tensor sigma =
                ugac::uncertainty::aleatoric_map(maps.alpha, maps.beta);
            for (double& v : sigma.values()) v = std::sqrt(v);
            ugac::io::save_tensor_raw(out / (stem + "_alpha.rt"), maps.alpha);
            ugac::io::save_tensor_raw(out / (stem + "_beta.rt"), maps.beta);
            ugac::io::save_tensor_raw(out / (stem + "_sigma.rt"), sigma);
            manifest.add_artifact(out / (stem + "_alpha.rt"));
            manifest.add_artifact(out / (stem + "_beta.rt"));
            manifest.add_artifact(out / (stem + "_sigma.rt"));
            if (a.png) {
                ugac::Tensor preview = sigma.detach();
                double top = 0.0;
                for (double v : preview.values()) top = std::max(top, v);
                if (top > 0.0)
                    for (double& v : preview.values()) v /= top;
                ugac::data::save_png(out / (stem + "_sigma.png"), preview);
            }
        }
    }
    manifest.meta()["inputs"] = images.size();
    manifest.write();
    std::cout << "translated " << images.size() << " images\n";
    return 0;
}

// ---------------------------------------------------------------------------
// perturb
// ---------------------------------------------------------------------------

struct PerturbArgs {
    std::string in_dir, family = "gaussian", level = "NL0", out_dir;
    long long seed = 0;
};

int cmd_perturb(const PerturbArgs& a) {
    const auto family = ugac::perturb::family_from_name(a.family);
    if (a.level.size() != 3 || a.level.rfind("NL", 0) != 0 || a.level[2] < '0' ||
        a.level[2] > '3')
        throw UsageError("level must be NL0..NL3");
    const int level = a.level[2] - '0';
    const auto spec = ugac::perturb::level_schedule(family)[static_cast<std::size_t>(level)];

    auto images = ugac::data::load_images(a.in_dir);
    if (images.empty()) throw ugac::DataError("no input images in " + a.in_dir);

    const fs::path out(a.out_dir);
    fs::create_directories(out);
    Manifest manifest("perturb", out);
    manifest.meta()["family"] = a.family;
    manifest.meta()["level"] = a.level;
    manifest.meta()["parameter"] = spec.parameter;
    manifest.meta()["seed"] = a.seed;

    for (std::size_t i = 0; i < images.size(); ++i) {
        ugac::Rng stream(ugac::mix_seed(static_cast<std::uint64_t>(a.seed),
                                        static_cast<std::uint64_t>(level), i));
        ugac::Tensor noisy = ugac::perturb::apply(images[i].second, spec, stream);
        // Raw tensor output: perturbed values are intentionally not clipped
        // to [0,1], which 8-bit PNG could not represent.
        const fs::path p = out / (stem_of(images[i].first) + ".rt");
        ugac::io::save_tensor_raw(p, noisy);
        manifest.add_artifact(p);
    }
    manifest.write();
    std::cout << "perturbed " << images.size() << " images at " << a.level << " ("
              << a.family << ", parameter " << spec.parameter << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string ckpt, data_dir, families = "gaussian,uniform,impulse", out_dir;
    long long seed = 0;
};

int cmd_evaluate(const EvaluateArgs& a) {
    auto trainer = load_trainer(a.ckpt);
    auto ds = ugac::data::load_dataset(a.data_dir);

    std::vector<ugac::perturb::Family> families;
    std::stringstream ss(a.families);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) families.push_back(ugac::perturb::family_from_name(tok));
    if (families.empty()) throw UsageError("no perturbation families given");

    const fs::path out(a.out_dir);
    fs::create_directories(out);
    Manifest manifest("evaluate", out);
    manifest.meta()["checkpoint"] = a.ckpt;
    manifest.meta()["seed"] = a.seed;

    ugac::metrics::Model model = [&](const ugac::Tensor& img) {
        return ugac::train::translate_image(trainer.g_a(), img).mean;
    };

    json report{{"version", ugac::kVersion},
                {"seed", a.seed},
                {"checkpoint", a.ckpt},
                {"config", ugac::train::config_to_json(trainer.config())},
                {"families", json::object()}};
    std::ostringstream csv;
    csv << "family,level,eta,mse,ssim\n";
    csv << std::setprecision(17);

    for (const auto family : families) {
        const char* fname = ugac::perturb::family_name(family);
        auto rep = ugac::metrics::robustness_report(model, ds.domain_a, family,
                                                    static_cast<std::uint64_t>(a.seed));
        report["families"][fname] = {{"eta", rep.amse.levels},
                                     {"mse", rep.amse.scores},
                                     {"ssim", rep.assim.scores},
                                     {"amse", rep.amse.area},
                                     {"assim", rep.assim.area}};
        for (std::size_t k = 0; k < rep.amse.levels.size(); ++k)
            csv << fname << ",NL" << k << "," << rep.amse.levels[k] << ","
                << rep.amse.scores[k] << "," << rep.assim.scores[k] << "\n";

        const std::string upper = [&] {
            std::string s = fname;
            for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            return s;
        }();
        ugac::plot::line_chart(out / ("curve_" + std::string(fname) + "_mse.png"),
                               upper + " MSE VS NL",
                               {{"MSE", rep.amse.levels, rep.amse.scores}});
        ugac::plot::line_chart(out / ("curve_" + std::string(fname) + "_ssim.png"),
                               upper + " SSIM VS NL",
                               {{"SSIM", rep.assim.levels, rep.assim.scores}});
        manifest.add_artifact(out / ("curve_" + std::string(fname) + "_mse.png"));
        manifest.add_artifact(out / ("curve_" + std::string(fname) + "_ssim.png"));
    }

    write_text(out / "report.json", report.dump(2) + "\n");
    write_text(out / "report.csv", csv.str());
    manifest.add_artifact(out / "report.json");
    manifest.add_artifact(out / "report.csv");
    manifest.write();
    std::cout << "evaluated " << families.size() << " families over "
              << ds.domain_a.size() << " images\n";
    return 0;
}

// ---------------------------------------------------------------------------
// uncertainty-corr
// ---------------------------------------------------------------------------

struct CorrArgs {
    std::string ckpt, paired_dir, out_dir;
    int mc_passes = 50;
    long long seed = 0;
};

int cmd_uncertainty_corr(const CorrArgs& a) {
    auto trainer = load_trainer(a.ckpt);
    auto inputs = ugac::data::load_images(fs::path(a.paired_dir) / "domainA");
    auto targets = ugac::data::load_images(fs::path(a.paired_dir) / "domainB");
    if (inputs.size() != targets.size())
        throw ugac::DataError("paired evaluation needs matching domainA/domainB counts");
    if (inputs.size() < 3)
        throw ugac::DataError("paired evaluation needs at least 3 images");

    std::vector<ugac::Tensor> preds, gts, totals;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto maps = ugac::train::translate_image(trainer.g_a(), inputs[i].second);
        ugac::Tensor aleatoric = ugac::uncertainty::aleatoric_map(maps.alpha, maps.beta);
        ugac::Rng mc(ugac::mix_seed(static_cast<std::uint64_t>(a.seed), 0xEC, i));
        ugac::Tensor epistemic = ugac::uncertainty::epistemic_map(
            [&] {
                return ugac::train::translate_mean_dropout(trainer.g_a(), inputs[i].second,
                                                           mc);
            },
            a.mc_passes);
        preds.push_back(maps.mean);
        gts.push_back(targets[i].second);
        totals.push_back(ugac::uncertainty::total_uncertainty(aleatoric, epistemic).total);
    }
    auto stats = ugac::uncertainty::uncertainty_residual_stats(preds, gts, totals);

    const fs::path out(a.out_dir);
    fs::create_directories(out);
    Manifest manifest("uncertainty-corr", out);
    manifest.meta()["checkpoint"] = a.ckpt;
    manifest.meta()["mc_passes"] = a.mc_passes;
    manifest.meta()["seed"] = a.seed;

    std::ostringstream csv;
    csv << "image,mean_residual,mean_sigma\n";
    csv << std::setprecision(17);
    for (std::size_t i = 0; i < inputs.size(); ++i)
        csv << inputs[i].first << "," << stats.mean_residual[i] << ","
            << stats.mean_sigma[i] << "\n";
    write_text(out / "scatter.csv", csv.str());

    json st{{"version", ugac::kVersion},
            {"n_images", inputs.size()},
            {"mc_passes", a.mc_passes},
            {"uncertainty_score", "mean per-pixel sqrt(total variance)"},
            {"pearson_r", stats.pearson_r},
            {"spearman_rho", stats.spearman_rho}};
    write_text(out / "stats.json", st.dump(2) + "\n");
    ugac::plot::scatter_chart(out / "scatter.png", "SIGMA VS RESIDUAL", stats.mean_sigma,
                              stats.mean_residual);
    manifest.add_artifact(out / "scatter.csv");
    manifest.add_artifact(out / "stats.json");
    manifest.add_artifact(out / "scatter.png");
    manifest.write();
    std::cout << "pearson_r=" << stats.pearson_r << " spearman_rho=" << stats.spearman_rho
              << " over " << inputs.size() << " images\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"UGAC: uncertainty-aware unpaired image translation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", ugac::kVersion);

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--config", train_args.config, "key=value run config file");
    train_cmd->add_option("--data", train_args.data_dir, "dataset dir (domainA/, domainB/)");
    train_cmd->add_option("--synth", train_args.synth, "use a synthetic dataset of N images");
    train_cmd->add_option("--out", train_args.out_dir, "output directory")->required();
    train_cmd->add_option("--epochs", train_args.epochs, "override epochs");
    train_cmd->add_option("--seed", train_args.seed, "override seed");
    train_cmd->add_option("--size", train_args.size, "override image size");

    TranslateArgs tr_args;
    auto* tr_cmd = app.add_subcommand("translate", "run a trained generator on images");
    tr_cmd->add_option("--ckpt", tr_args.ckpt, "checkpoint file")->required();
    tr_cmd->add_option("--in", tr_args.in_dir, "input image directory")->required();
    tr_cmd->add_option("--out", tr_args.out_dir, "output directory")->required();
    tr_cmd->add_option("--direction", tr_args.direction, "a2b or b2a")
        ->check(CLI::IsMember({"a2b", "b2a"}));
    tr_cmd->add_flag("--uncertainty", tr_args.uncertainty,
                     "also emit alpha, beta and sigma maps");
    tr_cmd->add_flag("--png", tr_args.png, "additionally write PNG previews");

    PerturbArgs p_args;
    auto* p_cmd = app.add_subcommand("perturb", "apply test-time perturbations");
    p_cmd->add_option("--in", p_args.in_dir, "input image directory")->required();
    p_cmd->add_option("--family", p_args.family, "gaussian, uniform or impulse")
        ->check(CLI::IsMember({"gaussian", "uniform", "impulse"}));
    p_cmd->add_option("--level", p_args.level, "NL0..NL3")->required();
    p_cmd->add_option("--seed", p_args.seed, "noise seed");
    p_cmd->add_option("--out", p_args.out_dir, "output directory")->required();

    EvaluateArgs e_args;
    auto* e_cmd = app.add_subcommand("evaluate", "robustness curves and area metrics");
    e_cmd->add_option("--ckpt", e_args.ckpt, "checkpoint file")->required();
    e_cmd->add_option("--data", e_args.data_dir, "dataset dir (clean images)")->required();
    e_cmd->add_option("--families", e_args.families, "comma-separated family list");
    e_cmd->add_option("--seed", e_args.seed, "noise seed");
    e_cmd->add_option("--out", e_args.out_dir, "output directory")->required();

    CorrArgs c_args;
    auto* c_cmd =
        app.add_subcommand("uncertainty-corr", "uncertainty vs residual correlation");
    c_cmd->add_option("--ckpt", c_args.ckpt, "checkpoint file")->required();
    c_cmd->add_option("--paired-eval", c_args.paired_dir,
                      "paired eval dir (domainA inputs, domainB ground truth)")
        ->required();
    c_cmd->add_option("--out", c_args.out_dir, "output directory")->required();
    c_cmd->add_option("--mc-passes", c_args.mc_passes, "dropout forward passes");
    c_cmd->add_option("--seed", c_args.seed, "Monte-Carlo seed");

    try {
        app.parse(argc, argv);
        if (train_cmd->parsed()) return cmd_train(train_args);
        if (tr_cmd->parsed()) return cmd_translate(tr_args);
        if (p_cmd->parsed()) return cmd_perturb(p_args);
        if (e_cmd->parsed()) return cmd_evaluate(e_args);
        if (c_cmd->parsed()) return cmd_uncertainty_corr(c_args);
        return kExitUsage;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        std::cerr << "run with --help for usage\n";
        return kExitUsage;
    } catch (const ugac::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
}
