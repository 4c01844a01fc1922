#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "errors.hpp"
#include "freq.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "mix.hpp"
#include "nn.hpp"
#include "teacher.hpp"
#include "tensor.hpp"

// Orchestration: the per-iteration three-step pipeline (stage-1 collaborative
// training, uncertainty-guided cyclic patch mixing, stage-2 retraining on the
// mixed triplets), optimization and scheduling, teacher-only evaluation,
// checkpointing, and full experiment runs.
//
// Per-iteration order (recorded in every run log): stage-1 gradient steps on
// students and teacher -> mixed-round gradient steps -> dual-source EMA blend
// into the teacher. The teacher receives gradients only from its supervised
// terms; unsupervised targets are stop-gradient pseudo-labels.
namespace cfc::trainer {

namespace fs = std::filesystem;

enum class TrainMode { cfc, mean_teacher_baseline, supervised_only };

inline std::string mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::cfc: return "cfc";
        case TrainMode::mean_teacher_baseline: return "mean_teacher_baseline";
        case TrainMode::supervised_only: return "supervised_only";
    }
    return "?";
}

inline TrainMode parse_mode(const std::string& s) {
    if (s == "cfc") return TrainMode::cfc;
    if (s == "mean_teacher_baseline") return TrainMode::mean_teacher_baseline;
    if (s == "supervised_only") return TrainMode::supervised_only;
    throw ConfigError("unknown mode '" + s + "'");
}

struct TrainConfig {
    nn::NetworkConfig network;  // in_channels fixed to 1 by the data path
    int height = 64, width = 64;
    int num_classes = 2;
    int epochs = 100;
    data::BatchPlan plan;
    double base_lr = 1e-4;
    double poly_power = 0.9;
    teacher::EmaConfig ema;
    double lambda_max = 0.1;
    mix::PatchGrid grid;
    data::AugmentConfig augment;
    // ablation switches
    bool use_hf_student = true;
    bool use_ccs = true;
    int mix_rounds = 2;                 // 0..2; round 0 forward, round 1 reverse
    bool separate_stage2_steps = true;  // false: one accumulated step per iteration
    TrainMode mode = TrainMode::cfc;
    unsigned seed = 1;

    void validate() const {
        network.validate();
        plan.validate();
        ema.validate();
        if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
        if (base_lr <= 0) throw ConfigError("TrainConfig: base_lr must be positive");
        if (lambda_max <= 0) throw ConfigError("TrainConfig: lambda_max must be positive");
        if (mix_rounds < 0 || mix_rounds > 2)
            throw ConfigError("TrainConfig: mix_rounds must be in {0, 1, 2}");
        if (num_classes != network.num_classes)
            throw ConfigError("TrainConfig: num_classes disagrees with network config");
        if (height < 8 || width < 8) throw ConfigError("TrainConfig: image size too small");
        const int mult = network.spatial_multiple();
        if (height % mult != 0 || width % mult != 0)
            throw ConfigError("TrainConfig: image size must be divisible by " +
                              std::to_string(mult));
        grid.check_divides(height, width);
    }
};

// ---------------------------------------------------------------- config JSON

inline nlohmann::json config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["mode"] = mode_name(c.mode);
    j["seed"] = c.seed;
    j["epochs"] = c.epochs;
    j["height"] = c.height;
    j["width"] = c.width;
    j["num_classes"] = c.num_classes;
    j["encoder_channels"] = c.network.encoder_channels;
    j["labeled_per_batch"] = c.plan.labeled_per_batch;
    j["unlabeled_per_batch"] = c.plan.unlabeled_per_batch;
    j["base_lr"] = c.base_lr;
    j["poly_power"] = c.poly_power;
    j["ema_alpha"] = c.ema.alpha;
    j["ema_beta"] = c.ema.beta;
    j["lambda_max"] = c.lambda_max;
    j["patch_count"] = c.grid.k;
    j["augment"] = c.augment.enabled;
    j["max_rotation_deg"] = c.augment.max_angle_deg;
    j["use_hf_student"] = c.use_hf_student;
    j["use_ccs"] = c.use_ccs;
    j["mix_rounds"] = c.mix_rounds;
    j["separate_stage2_steps"] = c.separate_stage2_steps;
    return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    const auto known = config_to_json(c);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key())) throw ConfigError("config: unknown key '" + it.key() + "'");
    try {
        if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
        if (j.contains("seed")) c.seed = j.at("seed").get<unsigned>();
        if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
        if (j.contains("height")) c.height = j.at("height").get<int>();
        if (j.contains("width")) c.width = j.at("width").get<int>();
        if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<int>();
        if (j.contains("encoder_channels"))
            c.network.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
        if (j.contains("labeled_per_batch"))
            c.plan.labeled_per_batch = j.at("labeled_per_batch").get<int>();
        if (j.contains("unlabeled_per_batch"))
            c.plan.unlabeled_per_batch = j.at("unlabeled_per_batch").get<int>();
        if (j.contains("base_lr")) c.base_lr = j.at("base_lr").get<double>();
        if (j.contains("poly_power")) c.poly_power = j.at("poly_power").get<double>();
        if (j.contains("ema_alpha")) c.ema.alpha = j.at("ema_alpha").get<double>();
        if (j.contains("ema_beta")) c.ema.beta = j.at("ema_beta").get<double>();
        if (j.contains("lambda_max")) c.lambda_max = j.at("lambda_max").get<double>();
        if (j.contains("patch_count")) c.grid.k = j.at("patch_count").get<int>();
        if (j.contains("augment")) c.augment.enabled = j.at("augment").get<bool>();
        if (j.contains("max_rotation_deg"))
            c.augment.max_angle_deg = j.at("max_rotation_deg").get<double>();
        if (j.contains("use_hf_student")) c.use_hf_student = j.at("use_hf_student").get<bool>();
        if (j.contains("use_ccs")) c.use_ccs = j.at("use_ccs").get<bool>();
        if (j.contains("mix_rounds")) c.mix_rounds = j.at("mix_rounds").get<int>();
        if (j.contains("separate_stage2_steps"))
            c.separate_stage2_steps = j.at("separate_stage2_steps").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + std::string(e.what()));
    }
    c.network.num_classes = c.num_classes;
    return c;
}

// ---------------------------------------------------------------- run state

struct RunState {
    TrainConfig cfg;
    long t_m = 1;  // total iteration budget (the ramp/decay horizon)
    long iteration = 0;
    double best_dsc = -1.0;
    nn::UNetF sl, sh, t;  // low-frequency student, high-frequency student, teacher
    nn::AdamF opt_sl, opt_sh, opt_t;
};

// Students get distinct init seeds (divergence between them is load-bearing);
// the teacher starts as a copy of the LF student.
inline RunState make_run_state(const TrainConfig& cfg, long t_m) {
    cfg.validate();
    if (t_m < 1) throw ConfigError("make_run_state: t_m must be >= 1");
    RunState st;
    st.cfg = cfg;
    st.t_m = t_m;
    nn::NetworkConfig nc = cfg.network;
    nc.num_classes = cfg.num_classes;
    nc.in_channels = 1;
    st.sl = nn::build_network<float>(nc, cfg.seed);
    st.sh = nn::build_network<float>(nc, cfg.seed + 1);
    st.t = st.sl;
    st.opt_sl.attach(st.sl);
    st.opt_sh.attach(st.sh);
    st.opt_t.attach(st.t);
    return st;
}

// ---------------------------------------------------------------- training step

namespace detail {

struct StageResult {
    double sup = 0, fcs = 0, ccs = 0, unsup = 0;
    TensorF sl_l, sh_l, t_l;  // labeled-batch logits (for labeled-side mixing)
    TensorF sl_u, sh_u, t_u;  // unlabeled-batch logits
};

// One collaborative pass: supervised terms on the labeled triplet for both
// students and the teacher, then (optionally) the consistency terms on the
// unlabeled triplet with gradients scaled by lam. Gradients accumulate into
// whatever is already in the nets' grad buffers.
inline StageResult run_stage(RunState& st, const freq::FrequencyTriplet& tl, const MaskT& y,
                             const freq::FrequencyTriplet* tu, double lam, bool keep_logits) {
    const bool hf = st.cfg.use_hf_student;
    StageResult r;
    {
        TensorF o_sl = st.sl.forward(tl.lf);
        TensorF d_sl(o_sl.shape);
        r.sup += losses::seg_loss(o_sl, y, &d_sl);
        st.sl.backward(d_sl);
        if (hf) {
            TensorF o_sh = st.sh.forward(tl.hf);
            TensorF d_sh(o_sh.shape);
            r.sup += losses::seg_loss(o_sh, y, &d_sh);
            st.sh.backward(d_sh);
            if (keep_logits) r.sh_l = std::move(o_sh);
        }
        TensorF o_t = st.t.forward(tl.ef);
        TensorF d_t(o_t.shape);
        r.sup += losses::seg_loss(o_t, y, &d_t);
        st.t.backward(d_t);
        if (keep_logits) {
            r.sl_l = std::move(o_sl);
            r.t_l = std::move(o_t);
            if (!hf) r.sh_l = r.sl_l;
        }
    }
    if (tu) {
        TensorF o_t = st.t.forward(tu->ef, false);  // stop-gradient teacher targets
        const MaskT y_t = losses::pseudo_label(o_t);
        TensorF o_sl = st.sl.forward(tu->lf);
        TensorF d_sl(o_sl.shape);
        TensorF o_sh, d_sh;
        if (hf) {
            o_sh = st.sh.forward(tu->hf);
            d_sh = TensorF(o_sh.shape);
        }
        if (hf) {
            const double a = losses::seg_loss(o_sl, y_t, &d_sl, static_cast<float>(0.5 * lam));
            const double b = losses::seg_loss(o_sh, y_t, &d_sh, static_cast<float>(0.5 * lam));
            r.fcs = 0.5 * (a + b);
        } else {
            r.fcs = losses::seg_loss(o_sl, y_t, &d_sl, static_cast<float>(lam));
        }
        if (st.cfg.use_ccs && hf) {
            const MaskT y_sl = losses::pseudo_label(o_sl);
            const MaskT y_sh = losses::pseudo_label(o_sh);
            const double a = losses::seg_loss(o_sh, y_sl, &d_sh, static_cast<float>(0.5 * lam));
            const double b = losses::seg_loss(o_sl, y_sh, &d_sl, static_cast<float>(0.5 * lam));
            r.ccs = 0.5 * (a + b);
        }
        st.sl.backward(d_sl);
        if (hf) st.sh.backward(d_sh);
        r.unsup = r.fcs + r.ccs;
        if (keep_logits) {
            r.sl_u = std::move(o_sl);
            r.sh_u = hf ? std::move(o_sh) : r.sl_u;
            r.t_u = std::move(o_t);
        }
    }
    return r;
}

}  // namespace detail

inline void check_finite_report(const losses::LossReport& r, long iteration) {
    const double vals[] = {r.sup1, r.unsup1, r.sup2, r.unsup2, r.fcs, r.ccs, r.total};
    for (double v : vals)
        if (!std::isfinite(v))
            throw NumericalError("non-finite loss at iteration " + std::to_string(iteration) +
                                 " (sup1=" + std::to_string(r.sup1) +
                                 " unsup1=" + std::to_string(r.unsup1) +
                                 " sup2=" + std::to_string(r.sup2) +
                                 " unsup2=" + std::to_string(r.unsup2) + ")");
}

inline losses::LossReport train_iteration(RunState& st, const data::LabeledBatch& lb,
                                          const TensorF* unlabeled) {
    const TrainConfig& cfg = st.cfg;
    const losses::LossWeights lw{cfg.lambda_max, st.t_m};
    const double lam = losses::lambda_ramp(std::min(st.iteration, st.t_m), lw);
    const double lr = nn::poly_lr(cfg.base_lr, std::min(st.iteration, st.t_m - 1), st.t_m,
                                  cfg.poly_power);
    losses::LossReport rep;
    rep.lambda = lam;

    if (cfg.mode == TrainMode::supervised_only) {
        st.t.zero_grad();
        TensorF out = st.t.forward(lb.images);
        TensorF dz(out.shape);
        rep.sup1 = losses::seg_loss(out, lb.masks, &dz);
        st.t.backward(dz);
        st.opt_t.step(st.t, lr);
        rep.finalize();
        check_finite_report(rep, st.iteration);
        ++st.iteration;
        return rep;
    }

    if (cfg.mode == TrainMode::mean_teacher_baseline) {
        // classic mean teacher on full-frequency inputs: one gradient-trained
        // student, teacher is pure single-source EMA of it
        st.sl.zero_grad();
        TensorF out = st.sl.forward(lb.images);
        TensorF dz(out.shape);
        rep.sup1 = losses::seg_loss(out, lb.masks, &dz);
        st.sl.backward(dz);
        if (unlabeled) {
            TensorF t_u = st.t.forward(*unlabeled, false);
            const MaskT y_t = losses::pseudo_label(t_u);
            TensorF s_u = st.sl.forward(*unlabeled);
            TensorF dzu(s_u.shape);
            rep.unsup1 = losses::seg_loss(s_u, y_t, &dzu, static_cast<float>(lam));
            rep.fcs = rep.unsup1;
            st.sl.backward(dzu);
        }
        st.opt_sl.step(st.sl, lr);
        teacher::EmaConfig single = cfg.ema;
        single.beta = 1.0;
        teacher::ema_update(st.t, st.sl, st.sl, single);
        rep.finalize();
        check_finite_report(rep, st.iteration);
        ++st.iteration;
        return rep;
    }

    // full pipeline
    if (!unlabeled) throw DataError("train_iteration: cfc mode needs an unlabeled batch");
    const freq::FrequencyTriplet trip_l = freq::decompose(lb.images);
    const freq::FrequencyTriplet trip_u = freq::decompose(*unlabeled);
    const bool hf = cfg.use_hf_student;
    const bool need_mix = cfg.mix_rounds > 0;

    auto zero_all = [&] {
        st.sl.zero_grad();
        if (hf) st.sh.zero_grad();
        st.t.zero_grad();
    };
    auto step_all = [&] {
        st.opt_sl.step(st.sl, lr);
        if (hf) st.opt_sh.step(st.sh, lr);
        st.opt_t.step(st.t, lr);
    };

    zero_all();
    detail::StageResult s1 = detail::run_stage(st, trip_l, lb.masks, &trip_u, lam, need_mix);
    rep.sup1 = s1.sup;
    rep.unsup1 = s1.unsup;
    rep.fcs = s1.fcs;
    rep.ccs = s1.ccs;
    if (cfg.separate_stage2_steps || !need_mix) step_all();

    if (need_mix) {
        const TensorF p_u = mix::joint_probability(s1.sl_u, s1.sh_u, s1.t_u);
        const TensorF u_u = mix::uncertainty(p_u);
        const mix::PatchSelection sel_u = mix::select_patches(u_u, p_u, cfg.grid);
        const TensorF p_l = mix::joint_probability(s1.sl_l, s1.sh_l, s1.t_l);
        const TensorF u_l = mix::uncertainty(p_l);
        const mix::PatchSelection sel_l = mix::select_patches(u_l, p_l, cfg.grid);

        for (int round = 0; round < cfg.mix_rounds; ++round) {
            const mix::MixRound dir = round == 0 ? mix::MixRound::forward : mix::MixRound::reverse;
            const freq::FrequencyTriplet ml = mix::cyclic_mix(trip_l, sel_l, cfg.grid, dir);
            const freq::FrequencyTriplet mu = mix::cyclic_mix(trip_u, sel_u, cfg.grid, dir);
            if (cfg.separate_stage2_steps) zero_all();
            // ground-truth masks pass through untouched: the mix permutes images only
            detail::StageResult s2 = detail::run_stage(st, ml, lb.masks, &mu, lam, false);
            rep.sup2 += s2.sup;
            rep.unsup2 += s2.unsup;
            if (cfg.separate_stage2_steps) step_all();
        }
        if (!cfg.separate_stage2_steps) step_all();
    }

    teacher::EmaConfig ema = cfg.ema;
    if (!hf) ema.beta = 1.0;  // single-student variants: HF source weight collapses to 0
    teacher::ema_update(st.t, st.sl, hf ? st.sh : st.sl, ema);

    rep.finalize();
    check_finite_report(rep, st.iteration);
    ++st.iteration;
    return rep;
}

// ---------------------------------------------------------------- evaluation

struct EvalRow {
    std::string name;
    metrics::MetricReport report;
};

struct EvalResult {
    std::vector<EvalRow> rows;
    double mean_dsc = 0, mean_iou = 0, mean_recall = 0, mean_mae = 0;
    std::optional<double> mean_hd95, mean_asd;
};

// Teacher-only inference; runs at the sample's native resolution when it is
// divisible by the network's spatial multiple, else resized to the configured
// training size (prediction evaluated at that size).
inline EvalResult evaluate(nn::UNetF& net_teacher, const std::vector<data::DatasetItem>& test,
                           const TrainConfig& cfg) {
    if (test.empty()) throw DataError("evaluate: test set is empty");
    const int mult = net_teacher.config.spatial_multiple();
    EvalResult res;
    double sh95 = 0, sasd = 0;
    int nh95 = 0, nasd = 0;
    for (const auto& item : test) {
        data::Sample s = data::load_sample(item);
        if (s.h % mult != 0 || s.w % mult != 0)
            s = data::augment(s, data::AugmentParams{}, cfg.height, cfg.width);
        TensorF x({1, 1, s.h, s.w});
        std::copy(s.image.begin(), s.image.end(), x.ptr());
        const TensorF logits = net_teacher.forward(x, false);
        const MaskT pm = losses::pseudo_label(logits);
        const metrics::Mask2D pred(pm.data.begin(), pm.data.end());
        const metrics::Mask2D gt(s.mask.begin(), s.mask.end());
        EvalRow row{item.name, metrics::evaluate_masks(pred, gt, s.h, s.w, cfg.num_classes)};
        res.mean_dsc += row.report.mean_dsc;
        res.mean_iou += row.report.mean_iou;
        res.mean_recall += row.report.mean_recall;
        res.mean_mae += row.report.mean_mae;
        if (row.report.mean_hd95) {
            sh95 += *row.report.mean_hd95;
            ++nh95;
        }
        if (row.report.mean_asd) {
            sasd += *row.report.mean_asd;
            ++nasd;
        }
        res.rows.push_back(std::move(row));
    }
    const double n = static_cast<double>(res.rows.size());
    res.mean_dsc /= n;
    res.mean_iou /= n;
    res.mean_recall /= n;
    res.mean_mae /= n;
    if (nh95) res.mean_hd95 = sh95 / nh95;
    if (nasd) res.mean_asd = sasd / nasd;
    return res;
}

// One row per image per class plus a mean row; tab-separated.
inline void write_metric_table(const fs::path& path, const EvalResult& r) {
    std::ofstream out(path);
    out << "image\tclass\tdsc\tiou\trecall\tmae\thd95\tasd\n";
    auto opt = [](const std::optional<double>& v) {
        return v ? std::to_string(*v) : std::string("undefined");
    };
    for (const auto& row : r.rows)
        for (std::size_t c = 0; c < row.report.per_class.size(); ++c) {
            const auto& m = row.report.per_class[c];
            out << row.name << "\t" << (c + 1) << "\t" << m.dsc << "\t" << m.iou << "\t" << m.recall
                << "\t" << m.mae << "\t" << opt(m.hd95) << "\t" << opt(m.asd) << "\n";
        }
    out << "mean\tall\t" << r.mean_dsc << "\t" << r.mean_iou << "\t" << r.mean_recall << "\t"
        << r.mean_mae << "\t" << opt(r.mean_hd95) << "\t" << opt(r.mean_asd) << "\n";
    if (!out) throw DataError("cannot write metric table " + path.string());
}

// ---------------------------------------------------------------- checkpoints

inline constexpr char kCheckpointMagic[8] = {'C', 'F', 'C', 'K', 'P', 'T', '0', '1'};

namespace detail {

inline void write_params(std::ofstream& out, nn::UNetF& net) {
    for (auto& p : net.params())
        out.write(reinterpret_cast<const char*>(p.value->ptr()),
                  static_cast<std::streamsize>(p.value->size() * sizeof(float)));
}

inline void read_params(std::ifstream& in, nn::UNetF& net) {
    for (auto& p : net.params())
        in.read(reinterpret_cast<char*>(p.value->ptr()),
                static_cast<std::streamsize>(p.value->size() * sizeof(float)));
}

inline void write_adam(std::ofstream& out, const nn::AdamF& opt) {
    for (const auto& t : opt.m)
        out.write(reinterpret_cast<const char*>(t.ptr()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
    for (const auto& t : opt.v)
        out.write(reinterpret_cast<const char*>(t.ptr()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
}

inline void read_adam(std::ifstream& in, nn::AdamF& opt) {
    for (auto& t : opt.m)
        in.read(reinterpret_cast<char*>(t.ptr()),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
    for (auto& t : opt.v)
        in.read(reinterpret_cast<char*>(t.ptr()),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
}

inline void skip_params(std::ifstream& in, nn::UNetF& net) {
    std::size_t n = 0;
    for (auto& p : net.params()) n += p.value->size();
    in.seekg(static_cast<std::streamoff>(n * sizeof(float)), std::ios::cur);
}

}  // namespace detail

// Layout: 8-byte tag, u64 header length, JSON header (config, counters, the
// parameter name/shape table, which collections are present), then raw
// float32 payloads in params() order: one block per collection, then Adam
// m+v per collection that has optimizer state.
inline void save_checkpoint(const fs::path& path, RunState& st, bool teacher_only = false) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot write " + path.string());

    nlohmann::json header;
    header["format"] = 1;
    header["config"] = config_to_json(st.cfg);
    header["iteration"] = st.iteration;
    header["t_m"] = st.t_m;
    header["best_dsc"] = st.best_dsc;
    header["collections"] = teacher_only
                                ? nlohmann::json::array({"teacher"})
                                : nlohmann::json::array({"student_lf", "student_hf", "teacher"});
    header["adam_steps"] =
        nlohmann::json::array({st.opt_sl.step_count, st.opt_sh.step_count, st.opt_t.step_count});
    header["has_optimizer"] = !teacher_only;
    nlohmann::json table = nlohmann::json::array();
    for (auto& p : st.t.params()) table.push_back({{"name", p.name}, {"shape", p.value->shape}});
    header["params"] = table;

    const std::string hs = header.dump();
    out.write(kCheckpointMagic, 8);
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    if (!teacher_only) {
        detail::write_params(out, st.sl);
        detail::write_params(out, st.sh);
    }
    detail::write_params(out, st.t);
    if (!teacher_only) {
        detail::write_adam(out, st.opt_sl);
        detail::write_adam(out, st.opt_sh);
        detail::write_adam(out, st.opt_t);
    }
    if (!out) throw DataError("checkpoint: write failed for " + path.string());
}

inline nlohmann::json read_checkpoint_header(std::ifstream& in, const fs::path& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw DataError("checkpoint: bad format tag in " + path.string());
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError("checkpoint: truncated header in " + path.string());
    try {
        return nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: unparsable header: " + std::string(e.what()));
    }
}

inline RunState load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path.string());
    const nlohmann::json header = read_checkpoint_header(in, path);
    if (!header.at("has_optimizer").get<bool>())
        throw DataError("checkpoint: " + path.string() + " is teacher-only; cannot resume training");
    RunState st = make_run_state(config_from_json(header.at("config")),
                                 header.at("t_m").get<long>());
    st.iteration = header.at("iteration").get<long>();
    st.best_dsc = header.at("best_dsc").get<double>();
    detail::read_params(in, st.sl);
    detail::read_params(in, st.sh);
    detail::read_params(in, st.t);
    detail::read_adam(in, st.opt_sl);
    detail::read_adam(in, st.opt_sh);
    detail::read_adam(in, st.opt_t);
    const auto steps = header.at("adam_steps");
    st.opt_sl.step_count = steps.at(0).get<long>();
    st.opt_sh.step_count = steps.at(1).get<long>();
    st.opt_t.step_count = steps.at(2).get<long>();
    if (!in) throw DataError("checkpoint: truncated payload in " + path.string());
    return st;
}

// Evaluation path: needs only the teacher collection, so checkpoints with
// student collections stripped still load.
inline std::pair<nn::UNetF, TrainConfig> load_teacher(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path.string());
    const nlohmann::json header = read_checkpoint_header(in, path);
    const TrainConfig cfg = config_from_json(header.at("config"));
    nn::NetworkConfig nc = cfg.network;
    nc.num_classes = cfg.num_classes;
    nc.in_channels = 1;
    nn::UNetF net = nn::build_network<float>(nc, cfg.seed);
    const auto collections = header.at("collections");
    bool found = false;
    for (const auto& c : collections) {
        if (c.get<std::string>() == "teacher") {
            detail::read_params(in, net);
            found = true;
            break;
        }
        detail::skip_params(in, net);  // all collections share the structure
    }
    if (!found) throw DataError("checkpoint: no teacher collection in " + path.string());
    if (!in) throw DataError("checkpoint: truncated payload in " + path.string());
    return {std::move(net), cfg};
}

// ---------------------------------------------------------------- experiments

inline std::string loss_log_header() {
    return "iteration,sup1,unsup1,sup2,unsup2,fcs,ccs,lambda,lr,total";
}

inline std::string loss_log_line(long iteration, double lr, const losses::LossReport& r) {
    char buf[320];
    std::snprintf(buf, sizeof(buf), "%ld,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g", iteration,
                  r.sup1, r.unsup1, r.sup2, r.unsup2, r.fcs, r.ccs, r.lambda, lr, r.total);
    return buf;
}

struct RunArtifacts {
    fs::path out_dir;
    double final_dsc = 0;
    double best_dsc = 0;
    EvalResult final_eval;
};

inline long iterations_per_epoch(const TrainConfig& cfg, const data::DatasetSpec& spec) {
    const long lab = (static_cast<long>(spec.labeled.size()) + cfg.plan.labeled_per_batch - 1) /
                     cfg.plan.labeled_per_batch;
    if (cfg.mode == TrainMode::supervised_only) return std::max(1L, lab);
    const long unl =
        (static_cast<long>(spec.unlabeled.size()) + cfg.plan.unlabeled_per_batch - 1) /
        cfg.plan.unlabeled_per_batch;
    return std::max(1L, std::max(lab, unl));
}

// Full training run: epochs x iterations_per_epoch iterations, per-iteration
// loss log, per-epoch teacher evaluation, best-DSC and last checkpoints, and
// a final per-image metric table. Resumable from <out>/last.ckpt (the data
// streams are rebuilt from the seed and fast-forwarded to the saved
// iteration, so a resumed run sees the batch sequence of an uninterrupted
// one).
inline RunArtifacts run_experiment(const TrainConfig& cfg, const fs::path& data_root,
                                   const fs::path& out_dir, bool resume = false) {
    cfg.validate();
    const data::DatasetSpec spec =
        data::load_dataset(data_root, cfg.height, cfg.width, cfg.num_classes);
    const long per_epoch = iterations_per_epoch(cfg, spec);
    const long t_m = per_epoch * cfg.epochs;
    fs::create_directories(out_dir);

    RunState st;
    const fs::path last_path = out_dir / "last.ckpt";
    const bool resuming = resume && fs::exists(last_path);
    if (resuming) {
        st = load_checkpoint(last_path);
        if (st.t_m != t_m) throw ConfigError("resume: iteration budget differs from checkpoint");
    } else {
        st = make_run_state(cfg, t_m);
    }

    data::BatchStream stream(spec, cfg.plan, cfg.augment, cfg.seed + 100);
    const bool wants_unlabeled =
        cfg.mode != TrainMode::supervised_only && stream.unlabeled_count() > 0;
    for (long i = 0; i < st.iteration; ++i) {  // fast-forward after resume
        stream.next_labeled();
        if (wants_unlabeled) stream.next_unlabeled();
    }

    {
        std::ofstream cfg_out(out_dir / "config.json");
        cfg_out << config_to_json(cfg).dump(2) << "\n";
    }
    std::ofstream log(out_dir / "loss_log.csv", resuming ? std::ios::app : std::ios::out);
    std::ofstream runlog(out_dir / "run.log", resuming ? std::ios::app : std::ios::out);
    if (!resuming) {
        log << loss_log_header() << "\n";
        runlog << "mode=" << mode_name(cfg.mode) << " seed=" << cfg.seed << " t_m=" << t_m
               << " per_epoch=" << per_epoch << "\n"
               << "iteration order: gradient steps (students+teacher supervised terms), "
                  "then dual-source EMA blend into the teacher\n";
    }

    while (st.iteration < t_m) {
        const data::LabeledBatch lb = stream.next_labeled();
        std::optional<TensorF> ub;
        if (wants_unlabeled) ub = stream.next_unlabeled();
        const long it = st.iteration;
        const double lr = nn::poly_lr(cfg.base_lr, std::min(it, t_m - 1), t_m, cfg.poly_power);
        const losses::LossReport rep = train_iteration(st, lb, ub ? &*ub : nullptr);
        log << loss_log_line(it, lr, rep) << "\n";

        if (st.iteration % per_epoch == 0 && !spec.test.empty()) {
            const EvalResult ev = evaluate(st.t, spec.test, cfg);
            runlog << "epoch " << st.iteration / per_epoch << " dsc=" << ev.mean_dsc
                   << " iou=" << ev.mean_iou << "\n";
            runlog.flush();
            if (ev.mean_dsc > st.best_dsc) {
                st.best_dsc = ev.mean_dsc;
                save_checkpoint(out_dir / "best.ckpt", st);
            }
            save_checkpoint(last_path, st);
        }
    }
    save_checkpoint(last_path, st);

    RunArtifacts art;
    art.out_dir = out_dir;
    if (!spec.test.empty()) {
        art.final_eval = evaluate(st.t, spec.test, cfg);
        art.final_dsc = art.final_eval.mean_dsc;
        if (art.final_dsc > st.best_dsc) {
            st.best_dsc = art.final_dsc;
            save_checkpoint(out_dir / "best.ckpt", st);
            save_checkpoint(last_path, st);
        }
        write_metric_table(out_dir / "metrics.tsv", art.final_eval);
    }
    art.best_dsc = st.best_dsc;
    return art;
}

// ---------------------------------------------------------------- ablation lattice

struct AblationRow {
    std::string name;
    TrainMode mode;
    bool use_hf_student;
    bool use_ccs;
    int mix_rounds;
};

// The ladder from plain supervision to the full method; each rung differs
// from the previous by exactly one switch, all driven from config.
inline std::vector<AblationRow> ablation_lattice() {
    return {
        {"baseline", TrainMode::supervised_only, false, false, 0},
        {"fcs_single", TrainMode::cfc, false, false, 0},
        {"fcs_bilateral", TrainMode::cfc, true, false, 0},
        {"ccs", TrainMode::cfc, true, true, 0},
        {"mix1", TrainMode::cfc, true, true, 1},
        {"mix12", TrainMode::cfc, true, true, 2},
    };
}

inline TrainConfig apply_ablation(TrainConfig cfg, const AblationRow& row) {
    cfg.mode = row.mode;
    cfg.use_hf_student = row.use_hf_student;
    cfg.use_ccs = row.use_ccs;
    cfg.mix_rounds = row.mix_rounds;
    return cfg;
}

}  // namespace cfc::trainer
