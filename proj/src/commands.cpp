#include "hrf/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "hrf/dataset.hpp"
#include "hrf/losses.hpp"
#include "hrf/model.hpp"
#include "hrf/nerf.hpp"
#include "hrf/synthcap.hpp"
#include "hrf/trainer.hpp"

namespace hrf::cli {

namespace fs = std::filesystem;
namespace d = hrf::diff;

void cmd_gen(const RunConfig& cfg) {
    cfg.validate();
    const body::BodyTemplate tmpl = body::make_capsule_body();
    synth::DatasetSpec spec;
    spec.n_poses = cfg.gen_poses;
    spec.n_views = cfg.gen_views;
    spec.resolution = cfg.resolution;
    spec.seed = cfg.seed;
    spec.cam_radius = cfg.cam_radius;
    spec.focal_factor = cfg.focal_factor;

    spec.out_dir = cfg.out_dir + "/train";
    spec.n_subjects = cfg.gen_train_subjects;
    spec.subject_seed_offset = 0;
    synth::generate_dataset(tmpl, spec);

    spec.out_dir = cfg.out_dir + "/test";
    spec.n_subjects = cfg.gen_test_subjects;
    spec.subject_seed_offset = 500;
    synth::generate_dataset(tmpl, spec);
}

void cmd_train(const RunConfig& cfg) {
    cfg.validate();
    const std::string train_dir = cfg.dataset_dir + "/train";
    if (!fs::exists(train_dir + "/meta.txt"))
        throw DataError("train: no dataset at " + train_dir);
    data::Dataset ds = data::Dataset::open(train_dir);
    fs::create_directories(cfg.out_dir);

    model::Model m = model::Model::build(cfg);
    std::ofstream log(cfg.out_dir + "/train_log.tsv");
    if (!log) throw DataError("train: cannot write log under " + cfg.out_dir);
    log << std::setprecision(12);
    try {
        train::train(m, ds, cfg, log, cfg.out_dir, cfg.checkpoint);
    } catch (const std::runtime_error& e) {
        if (std::string(e.what()).find("non-finite") != std::string::npos)
            throw NumericError(e.what());
        throw;
    }
}

namespace {

struct LoadedModel {
    model::Model m;
    train::CheckpointInfo info;
};

LoadedModel load_model(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw UsageError("a --checkpoint is required");
    if (!fs::exists(cfg.checkpoint))
        throw DataError("checkpoint not found: " + cfg.checkpoint);
    LoadedModel lm{model::Model::build(cfg), {}};
    try {
        lm.info = train::load_checkpoint(cfg.checkpoint, lm.m, model_hash(cfg));
    } catch (const std::runtime_error& e) {
        throw DataError(e.what());
    }
    return lm;
}

struct RenderedFrame {
    img::Image image;
    img::Image mask;
};

// Full-image render of a target camera/pose given an input observation.
RenderedFrame render_frame(model::Model& m, const data::Dataset& ds,
                           const data::Frame& input, const geom::CameraView& cam,
                           const std::vector<body::Vector3d>& theta,
                           const std::vector<double>& beta,
                           const RunConfig& cfg) {
    d::NoGradGuard ng;
    const body::BodyTemplate& tmpl = ds.body();
    const body::BodyState obs = body::pose_body(tmpl, input.theta, input.beta);
    const feat::FeatureBank bank =
        m.make_bank(input.image, input.mask, input.cam, obs, tmpl);
    const body::BodyState tgt = body::pose_body(tmpl, theta, beta);

    std::vector<geom::Ray> rays;
    rays.reserve(static_cast<std::size_t>(cam.width) * cam.height);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
            rays.push_back(geom::cast_ray(cam, {x + 0.5, y + 0.5}));

    nerf::RenderOptions opt;
    opt.n_samples = cfg.n_samples;
    opt.jitter = cfg.jitter;
    opt.seed = cfg.seed;
    opt.gate_threshold = cfg.gate_threshold;
    opt.aabb_margin = cfg.aabb_margin;
    opt.background = cfg.background;
    const nerf::RenderResult rr = nerf::render_rays(
        rays, tgt, tmpl, bank, m.fus, m.fus_cfg, m.dec, m.dec_cfg, opt);

    RenderedFrame out;
    out.image = img::make_image(cam.width, cam.height, 3);
    out.mask = img::make_image(cam.width, cam.height, 1);
    const auto cv = rr.c_hat.values();
    const auto mv = rr.m_hat.values();
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * cam.width + x;
            for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = cv[i * 3 + c];
            out.mask.at(x, y) = mv[i];
        }
    return out;
}

std::optional<loss::PixelRect> metric_rect(const data::Dataset& ds,
                                           const std::vector<body::Vector3d>& theta,
                                           const std::vector<double>& beta,
                                           const geom::CameraView& cam) {
    const body::BodyState st = body::pose_body(ds.body(), theta, beta);
    return loss::project_aabb(cam, geom::Aabb::of_points(st.verts_o));
}

}  // namespace

RenderOutput cmd_render(const RunConfig& cfg, const FrameSel& input,
                        const FrameSel& target) {
    cfg.validate();
    if (!fs::exists(cfg.dataset_dir + "/meta.txt"))
        throw DataError("render: no dataset at " + cfg.dataset_dir);
    data::Dataset ds = data::Dataset::open(cfg.dataset_dir);
    LoadedModel lm = load_model(cfg);

    data::Frame in;
    data::Frame tgt;
    try {
        in = ds.frame(input.subject, input.pose, input.view);
        tgt = ds.frame(target.subject, target.pose, target.view);
    } catch (const std::runtime_error& e) {
        throw DataError(e.what());
    }

    const RenderedFrame rf =
        render_frame(lm.m, ds, in, tgt.cam, tgt.theta, tgt.beta, cfg);
    fs::create_directories(cfg.out_dir);
    RenderOutput out;
    out.image = rf.image;
    out.mask = rf.mask;
    out.image_path = cfg.out_dir + "/render.png";
    out.mask_path = cfg.out_dir + "/render_mask.png";
    img::write_png(out.image_path, out.image);
    img::write_png(out.mask_path, out.mask);
    return out;
}

EvalResult cmd_eval(const RunConfig& cfg) {
    cfg.validate();
    if (!fs::exists(cfg.dataset_dir + "/meta.txt"))
        throw DataError("eval: no dataset at " + cfg.dataset_dir);
    data::Dataset ds = data::Dataset::open(cfg.dataset_dir);
    LoadedModel lm = load_model(cfg);

    EvalResult res;
    double sum_pv = 0, sum_sv = 0, sum_pp = 0, sum_sp = 0;
    int n_view = 0, n_pose = 0;

    auto evaluate = [&](const data::Frame& in, const data::Frame& tgt,
                        bool novel_pose) {
        const RenderedFrame rf =
            render_frame(lm.m, ds, in, tgt.cam, tgt.theta, tgt.beta, cfg);
        const auto rect = metric_rect(ds, tgt.theta, tgt.beta, tgt.cam);
        EvalRow row;
        row.id = in.id + "->" + tgt.id;
        row.novel_pose = novel_pose;
        row.psnr = loss::psnr(rf.image, tgt.image, rect);
        row.ssim = loss::ssim_masked(rf.image, tgt.image, rect);
        if (rect) {
            double body_px = 0;
            for (int y = rect->y0; y < rect->y1; ++y)
                for (int x = rect->x0; x < rect->x1; ++x)
                    if (tgt.mask.at(x, y) > 0.5) body_px += 1.0;
            row.coverage = body_px / (rect->width() * rect->height());
        }
        res.rows.push_back(row);
        if (novel_pose) {
            sum_pp += row.psnr;
            sum_sp += row.ssim;
            ++n_pose;
        } else {
            sum_pv += row.psnr;
            sum_sv += row.ssim;
            ++n_view;
        }
    };

    for (int s = 0; s < ds.n_subjects(); ++s) {
        // Novel view: per pose, one input view, all other views as targets.
        for (int p = 0; p < ds.n_poses(); ++p) {
            const int v0 = (s + p) % ds.n_views();
            const data::Frame in = ds.frame(s, p, v0);
            for (int v = 0; v < ds.n_views(); ++v) {
                if (v == v0) continue;
                evaluate(in, ds.frame(s, p, v), false);
            }
        }
        // Novel pose: pose 0 input, other poses at the same view.
        if (ds.n_poses() > 1) {
            const int v0 = s % ds.n_views();
            const data::Frame in = ds.frame(s, 0, v0);
            for (int p = 1; p < ds.n_poses(); ++p)
                evaluate(in, ds.frame(s, p, v0), true);
        }
    }
    if (n_view) {
        res.mean_psnr_view = sum_pv / n_view;
        res.mean_ssim_view = sum_sv / n_view;
    }
    if (n_pose) {
        res.mean_psnr_pose = sum_pp / n_pose;
        res.mean_ssim_pose = sum_sp / n_pose;
    }

    fs::create_directories(cfg.out_dir);
    std::ofstream os(cfg.out_dir + "/metrics.txt");
    os << std::setprecision(10);
    os << "# image_id psnr_db ssim coverage\n";
    os << "[novel_view]\n";
    for (const auto& r : res.rows)
        if (!r.novel_pose)
            os << r.id << ' ' << r.psnr << ' ' << r.ssim << ' ' << r.coverage
               << '\n';
    os << "mean " << res.mean_psnr_view << ' ' << res.mean_ssim_view << '\n';
    os << "[novel_pose]\n";
    for (const auto& r : res.rows)
        if (r.novel_pose)
            os << r.id << ' ' << r.psnr << ' ' << r.ssim << ' ' << r.coverage
               << '\n';
    os << "mean " << res.mean_psnr_pose << ' ' << res.mean_ssim_pose << '\n';
    return res;
}

SweepResult cmd_sweep_views(const RunConfig& cfg) {
    cfg.validate();
    if (!fs::exists(cfg.dataset_dir + "/meta.txt"))
        throw DataError("sweep-views: no dataset at " + cfg.dataset_dir);
    data::Dataset ds = data::Dataset::open(cfg.dataset_dir);
    if (ds.n_views() != 12)
        throw DataError("sweep-views: ring incomplete, need exactly 12 views");
    LoadedModel lm = load_model(cfg);

    SweepResult res;
    res.input_yaw_deg.resize(12);
    res.mean_psnr_per_input.assign(12, 0.0);
    std::map<int, std::pair<double, int>> buckets;  // delta -> (sum, count)

    for (int vi = 0; vi < 12; ++vi) {
        double sum = 0;
        int count = 0;
        for (int s = 0; s < ds.n_subjects(); ++s) {
            const data::Frame in = ds.frame(s, 0, vi);
            res.input_yaw_deg[vi] = in.yaw_deg;
            for (int vt = 0; vt < 12; ++vt) {
                if (vt == vi) continue;
                const data::Frame tgt = ds.frame(s, 0, vt);
                const RenderedFrame rf =
                    render_frame(lm.m, ds, in, tgt.cam, tgt.theta, tgt.beta, cfg);
                const auto rect = metric_rect(ds, tgt.theta, tgt.beta, tgt.cam);
                const double p = loss::psnr(rf.image, tgt.image, rect);
                sum += p;
                ++count;
                int delta = std::abs(vt - vi) * 30;
                delta = std::min(delta, 360 - delta);  // ring symmetry
                auto& b = buckets[delta];
                b.first += p;
                b.second += 1;
            }
        }
        res.mean_psnr_per_input[vi] = sum / count;
    }
    for (const auto& [delta, sc] : buckets)
        res.bucket_mean_psnr[delta] = sc.first / sc.second;

    fs::create_directories(cfg.out_dir);
    std::ofstream os(cfg.out_dir + "/sweep.txt");
    os << std::setprecision(10);
    os << "# input_yaw_deg mean_psnr_over_11_targets\n";
    for (int vi = 0; vi < 12; ++vi)
        os << res.input_yaw_deg[vi] << ' ' << res.mean_psnr_per_input[vi] << '\n';
    os << "# yaw_difference_deg mean_psnr\n";
    for (const auto& [delta, p] : res.bucket_mean_psnr)
        os << delta << ' ' << p << '\n';
    return res;
}

}  // namespace hrf::cli
