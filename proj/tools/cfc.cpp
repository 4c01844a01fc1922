// Command-line front end: dataset synthesis, training, evaluation, the
// ablation lattice, and qualitative overlay export.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical abort,
// 1 anything else. Relative output paths resolve under $CFC_OUTPUT_ROOT when
// that variable is set.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <cfc/trainer.hpp>

namespace fs = std::filesystem;
using namespace cfc;

namespace {

fs::path resolve_out(const fs::path& p) {
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("CFC_OUTPUT_ROOT")) return fs::path(root) / p;
    return p;
}

// Config precedence: library defaults < --config file < explicit flags. The
// flags patch the json form so config_from_json stays the single validator.
struct ConfigFlags {
    std::string config_file;
    std::string mode;
    unsigned seed = 0;
    int epochs = 0, height = 0, width = 0, mix_rounds = 0;
    int labeled_per_batch = 0, unlabeled_per_batch = 0;
    double base_lr = 0, lambda_max = 0;
    std::vector<int> channels;
    bool no_augment = false, no_hf_student = false, no_ccs = false;
    bool accumulate_stage2 = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "json config file");
        cmd->add_option("--mode", mode, "cfc | mean_teacher_baseline | supervised_only");
        cmd->add_option("--seed", seed, "training seed");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--height", height, "training image height");
        cmd->add_option("--width", width, "training image width");
        cmd->add_option("--base-lr", base_lr, "initial learning rate");
        cmd->add_option("--lambda-max", lambda_max, "consistency weight ceiling");
        cmd->add_option("--channels", channels, "encoder channel widths");
        cmd->add_option("--labeled-per-batch", labeled_per_batch, "labeled batch size");
        cmd->add_option("--unlabeled-per-batch", unlabeled_per_batch, "unlabeled batch size");
        cmd->add_option("--mix-rounds", mix_rounds, "patch-mix rounds (0-2)");
        cmd->add_flag("--no-augment", no_augment, "disable flips/rotation");
        cmd->add_flag("--no-hf-student", no_hf_student, "drop the high-frequency student");
        cmd->add_flag("--no-ccs", no_ccs, "drop the cross-student consistency term");
        cmd->add_flag("--accumulate-stage2", accumulate_stage2,
                      "one optimizer step per iteration instead of one per stage");
    }

    trainer::TrainConfig build(const CLI::App* cmd) const {
        nlohmann::json j;
        if (!config_file.empty()) {
            std::ifstream in(config_file);
            if (!in) throw ConfigError("cannot open config file " + config_file);
            try {
                in >> j;
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError("unparsable config file: " + std::string(e.what()));
            }
        }
        auto passed = [&](const char* flag) { return cmd->count(flag) > 0; };
        if (passed("--mode")) j["mode"] = mode;
        if (passed("--seed")) j["seed"] = seed;
        if (passed("--epochs")) j["epochs"] = epochs;
        if (passed("--height")) j["height"] = height;
        if (passed("--width")) j["width"] = width;
        if (passed("--base-lr")) j["base_lr"] = base_lr;
        if (passed("--lambda-max")) j["lambda_max"] = lambda_max;
        if (passed("--channels")) j["encoder_channels"] = channels;
        if (passed("--labeled-per-batch")) j["labeled_per_batch"] = labeled_per_batch;
        if (passed("--unlabeled-per-batch")) j["unlabeled_per_batch"] = unlabeled_per_batch;
        if (passed("--mix-rounds")) j["mix_rounds"] = mix_rounds;
        if (no_augment) j["augment"] = false;
        if (no_hf_student) j["use_hf_student"] = false;
        if (no_ccs) j["use_ccs"] = false;
        if (accumulate_stage2) j["separate_stage2_steps"] = false;
        trainer::TrainConfig cfg = trainer::config_from_json(j);
        cfg.validate();
        return cfg;
    }
};

void print_eval(const trainer::EvalResult& ev) {
    std::cout << "mean_dsc=" << ev.mean_dsc << " mean_iou=" << ev.mean_iou
              << " mean_recall=" << ev.mean_recall << " mean_mae=" << ev.mean_mae;
    if (ev.mean_hd95) std::cout << " mean_hd95=" << *ev.mean_hd95;
    if (ev.mean_asd) std::cout << " mean_asd=" << *ev.mean_asd;
    std::cout << "\n";
}

void write_overlay_pgm(const fs::path& path, const std::vector<std::uint16_t>& pix, int h, int w) {
    data::GrayImage img;
    img.h = h;
    img.w = w;
    img.maxval = 255;
    img.pix = pix;
    data::write_pgm(path, img);
}

int run(int argc, char** argv) {
    CLI::App app{"cross-frequency collaborative semi-supervised segmentation"};
    app.require_subcommand(1);

    // ------------------------------------------------------------ generate-phantoms
    auto* gen = app.add_subcommand("generate-phantoms", "synthesize a phantom dataset tree");
    std::string gen_root;
    data::PhantomConfig pc;
    int gen_size = 0;
    gen->add_option("--root", gen_root, "dataset root to create")->required();
    gen->add_option("--train-count", pc.train_count, "training images");
    gen->add_option("--test-count", pc.test_count, "test images");
    gen->add_option("--labeled-fraction", pc.labeled_fraction, "labeled share of train");
    gen->add_option("--height", pc.height, "image height");
    gen->add_option("--width", pc.width, "image width");
    gen->add_option("--size", gen_size, "square size shorthand");
    gen->add_option("--seed", pc.seed, "generator seed");
    gen->add_option("--contrast", pc.contrast, "curve brightness over background");
    gen->add_option("--noise-sigma", pc.noise_sigma, "additive noise level");

    // ------------------------------------------------------------ train
    auto* train = app.add_subcommand("train", "run one training experiment");
    std::string train_data, train_out;
    bool train_resume = false;
    ConfigFlags train_flags;
    train->add_option("--data", train_data, "dataset root")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_flag("--resume", train_resume, "continue from <out>/last.ckpt");
    train_flags.attach(train);

    // ------------------------------------------------------------ evaluate
    auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint's teacher on a test split");
    std::string eval_ckpt, eval_data, eval_out;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint archive")->required();
    eval->add_option("--data", eval_data, "dataset root")->required();
    eval->add_option("--out", eval_out, "metric table path (tsv)");

    // ------------------------------------------------------------ ablate
    auto* abl = app.add_subcommand("ablate", "run the component-ablation lattice");
    std::string abl_data, abl_out;
    std::vector<unsigned> abl_seeds{1, 2, 3};
    ConfigFlags abl_flags;
    abl->add_option("--data", abl_data, "dataset root")->required();
    abl->add_option("--out", abl_out, "output directory")->required();
    abl->add_option("--seeds", abl_seeds, "seeds averaged per rung");
    abl_flags.attach(abl);

    // ------------------------------------------------------------ export-overlays
    auto* ov = app.add_subcommand("export-overlays",
                                  "write predicted masks and uncertainty heatmaps");
    std::string ov_ckpt, ov_data, ov_out;
    ov->add_option("--checkpoint", ov_ckpt, "checkpoint archive")->required();
    ov->add_option("--data", ov_data, "dataset root")->required();
    ov->add_option("--out", ov_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad flags are configuration errors
    }

    if (gen->parsed()) {
        if (gen_size > 0) pc.height = pc.width = gen_size;
        pc.validate();
        const data::DatasetSpec spec = data::generate_phantom_dataset(resolve_out(gen_root), pc);
        std::cout << "wrote " << spec.labeled.size() << " labeled + " << spec.unlabeled.size()
                  << " unlabeled + " << spec.test.size() << " test images under " << spec.root
                  << "\n";
    }

    if (train->parsed()) {
        const trainer::TrainConfig cfg = train_flags.build(train);
        const auto art =
            trainer::run_experiment(cfg, train_data, resolve_out(train_out), train_resume);
        std::cout << "final ";
        print_eval(art.final_eval);
        std::cout << "best_dsc=" << art.best_dsc << " artifacts=" << art.out_dir << "\n";
    }

    if (eval->parsed()) {
        auto [net, cfg] = trainer::load_teacher(eval_ckpt);
        const data::DatasetSpec spec =
            data::load_dataset(eval_data, cfg.height, cfg.width, cfg.num_classes);
        const trainer::EvalResult ev = trainer::evaluate(net, spec.test, cfg);
        print_eval(ev);
        if (!eval_out.empty()) {
            trainer::write_metric_table(resolve_out(eval_out), ev);
            std::cout << "wrote " << resolve_out(eval_out) << "\n";
        }
    }

    if (abl->parsed()) {
        const trainer::TrainConfig base = abl_flags.build(abl);
        const fs::path out = resolve_out(abl_out);
        fs::create_directories(out);
        std::ofstream table(out / "ablation.tsv");
        table << "row\tseed\tfinal_dsc\tbest_dsc\n";
        std::cout << "row\tmean_final_dsc\n";
        for (const auto& row : trainer::ablation_lattice()) {
            double mean = 0;
            for (unsigned seed : abl_seeds) {
                trainer::TrainConfig cfg = trainer::apply_ablation(base, row);
                cfg.seed = seed;
                const auto art = trainer::run_experiment(
                    cfg, abl_data, out / (row.name + "_seed" + std::to_string(seed)));
                table << row.name << "\t" << seed << "\t" << art.final_dsc << "\t" << art.best_dsc
                      << "\n";
                table.flush();
                mean += art.final_dsc;
            }
            std::cout << row.name << "\t" << mean / abl_seeds.size() << "\n";
        }
        std::cout << "wrote " << (out / "ablation.tsv") << "\n";
    }

    if (ov->parsed()) {
        auto [net, cfg] = trainer::load_teacher(ov_ckpt);
        const data::DatasetSpec spec =
            data::load_dataset(ov_data, cfg.height, cfg.width, cfg.num_classes);
        if (spec.test.empty()) throw DataError("export-overlays: test split is empty");
        const fs::path out = resolve_out(ov_out);
        fs::create_directories(out);
        const int mult = net.config.spatial_multiple();
        const double u_scale = 255.0 / std::log(static_cast<double>(cfg.num_classes));
        for (const auto& item : spec.test) {
            data::Sample s = data::load_sample(item);
            if (s.h % mult != 0 || s.w % mult != 0)
                s = data::augment(s, data::AugmentParams{}, cfg.height, cfg.width);
            TensorF x({1, 1, s.h, s.w});
            std::copy(s.image.begin(), s.image.end(), x.ptr());
            const TensorF logits = net.forward(x, false);
            const MaskT pred = losses::pseudo_label(logits);
            // single-model entropy: the joint map degenerates to one softmax
            const TensorF u = mix::uncertainty(mix::joint_probability(logits, logits, logits));

            std::vector<std::uint16_t> mask_pix(pred.data.size());
            for (std::size_t i = 0; i < pred.data.size(); ++i)
                mask_pix[i] =
                    static_cast<std::uint16_t>(pred.data[i] * 255 / (cfg.num_classes - 1));
            std::vector<std::uint16_t> heat_pix(u.data.size());
            for (std::size_t i = 0; i < u.data.size(); ++i)
                heat_pix[i] = static_cast<std::uint16_t>(
                    std::clamp(u.data[i] * u_scale, 0.0, 255.0));
            write_overlay_pgm(out / (item.name + "_pred.pgm"), mask_pix, s.h, s.w);
            write_overlay_pgm(out / (item.name + "_uncertainty.pgm"), heat_pix, s.h, s.w);
        }
        std::cout << "wrote " << 2 * spec.test.size() << " overlays under " << out << "\n";
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
