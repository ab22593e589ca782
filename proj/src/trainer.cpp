#include "hrf/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <stdexcept>

#include "hrf/tensor_ops.hpp"

namespace hrf::train {

namespace d = hrf::diff;

void adam_step(std::span<double> param, std::span<const double> grad,
               std::span<double> m, std::span<double> v, long t, double lr,
               double beta1, double beta2, double eps) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = i < grad.size() ? grad[i] : 0.0;
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

Adam::Adam(model::Model& model) {
    model.visit_params([this](const std::string& name, d::Tensor& t) {
        Entry e;
        e.name = name;
        e.param = t;
        e.m.assign(t.numel(), 0.0);
        e.v.assign(t.numel(), 0.0);
        entries_.push_back(std::move(e));
    });
}

void Adam::step(double lr) {
    ++t_;
    for (Entry& e : entries_)
        adam_step(e.param.values_mut(), e.param.grad(), e.m, e.v, t_, lr);
}

void Adam::zero_grads() {
    for (Entry& e : entries_) e.param.zero_grad();
}

FramePair sample_pair(const data::Dataset& ds, Rng& rng) {
    if (ds.n_subjects() < 1) throw std::runtime_error("sample_pair: empty dataset");
    const int s = static_cast<int>(rng.uniform_int(ds.n_subjects()));
    const int f = ds.frames_per_subject();
    const int fi = static_cast<int>(rng.uniform_int(f));
    const int ft = static_cast<int>(rng.uniform_int(f));
    FramePair pair;
    pair.subject = s;
    pair.input = ds.frame(s, fi / ds.n_views(), fi % ds.n_views());
    pair.target = ds.frame(s, ft / ds.n_views(), ft % ds.n_views());
    return pair;
}

StepOutcome evaluate_pair(model::Model& m, const data::Dataset& ds,
                          const FramePair& pair, const RunConfig& cfg,
                          const loss::PerceptualNet& perc,
                          std::uint64_t step_seed) {
    const body::BodyTemplate& tmpl = ds.body();
    const body::BodyState obs =
        body::pose_body(tmpl, pair.input.theta, pair.input.beta);
    const feat::FeatureBank bank =
        m.make_bank(pair.input.image, pair.input.mask, pair.input.cam, obs, tmpl);
    const body::BodyState tgt =
        body::pose_body(tmpl, pair.target.theta, pair.target.beta);

    const int w = pair.target.image.width, h = pair.target.image.height;
    const geom::Aabb box =
        geom::Aabb::of_points(tgt.verts_o).inflated(cfg.aabb_margin);
    const loss::PixelRect rect =
        loss::project_aabb(pair.target.cam, box).value_or(loss::PixelRect{0, 0, w, h});

    std::vector<std::pair<int, int>> mask_px;
    for (int y = rect.y0; y < rect.y1; ++y)
        for (int x = rect.x0; x < rect.x1; ++x)
            if (pair.target.mask.at(x, y) > 0.5) mask_px.emplace_back(x, y);

    Rng rng(mix_seed(step_seed, 0xA11CEULL));
    const int q = cfg.ssim_patch;
    const int n_scatter = cfg.rays_per_step - q * q;
    std::vector<std::pair<int, int>> pixels;
    pixels.reserve(cfg.rays_per_step);
    for (int i = 0; i < n_scatter; ++i) {
        if (!mask_px.empty() && rng.uniform() < cfg.mask_bias) {
            pixels.push_back(mask_px[rng.uniform_int(mask_px.size())]);
        } else {
            pixels.emplace_back(
                rect.x0 + static_cast<int>(rng.uniform_int(rect.width())),
                rect.y0 + static_cast<int>(rng.uniform_int(rect.height())));
        }
    }
    // A q x q patch for the structural losses; inside the box when it fits.
    const int lox = std::clamp(rect.x0, 0, w - q);
    const int hix = std::clamp(rect.x1 - q, lox, w - q);
    const int loy = std::clamp(rect.y0, 0, h - q);
    const int hiy = std::clamp(rect.y1 - q, loy, h - q);
    const int px0 = lox + static_cast<int>(rng.uniform_int(hix - lox + 1));
    const int py0 = loy + static_cast<int>(rng.uniform_int(hiy - loy + 1));
    for (int yy = 0; yy < q; ++yy)
        for (int xx = 0; xx < q; ++xx) pixels.emplace_back(px0 + xx, py0 + yy);

    const std::size_t n_rays = pixels.size();
    std::vector<geom::Ray> rays;
    rays.reserve(n_rays);
    std::vector<double> gt_c(n_rays * 3), gt_m(n_rays);
    for (std::size_t i = 0; i < n_rays; ++i) {
        const auto [x, y] = pixels[i];
        rays.push_back(geom::cast_ray(pair.target.cam, {x + 0.5, y + 0.5}));
        for (int c = 0; c < 3; ++c) gt_c[i * 3 + c] = pair.target.image.at(x, y, c);
        gt_m[i] = pair.target.mask.at(x, y) > 0.5 ? 1.0 : 0.0;
    }

    nerf::RenderOptions opt;
    opt.n_samples = cfg.n_samples;
    opt.jitter = true;  // stratified jitter during training
    opt.seed = mix_seed(step_seed, 0xBEEFULL);
    opt.gate_threshold = cfg.gate_threshold;
    opt.aabb_margin = cfg.aabb_margin;
    opt.background = cfg.background;
    const nerf::RenderResult rr = nerf::render_rays(
        rays, tgt, tmpl, bank, m.fus, m.fus_cfg, m.dec, m.dec_cfg, opt);

    d::Tensor gt_color = d::Tensor::from_data({n_rays, 3}, std::move(gt_c));
    d::Tensor gt_mask = d::Tensor::from_data({n_rays}, std::move(gt_m));
    d::Tensor l_color = loss::photometric(rr.c_hat, gt_color);
    d::Tensor l_mask = loss::mask_loss(rr.m_hat, gt_mask);

    const std::size_t qq = static_cast<std::size_t>(q);
    d::Tensor patch_hat = d::reshape(
        d::transpose_last2(d::narrow(rr.c_hat, 0, n_scatter, qq * qq)),
        {3, qq, qq});
    std::vector<double> pg(3 * qq * qq);
    for (int c = 0; c < 3; ++c)
        for (int yy = 0; yy < q; ++yy)
            for (int xx = 0; xx < q; ++xx)
                pg[(static_cast<std::size_t>(c) * qq + yy) * qq + xx] =
                    pair.target.image.at(px0 + xx, py0 + yy, c);
    d::Tensor patch_gt = d::Tensor::from_data({3, qq, qq}, std::move(pg));

    d::Tensor l_ssim =
        d::add_scalar(d::scale(loss::ssim(patch_hat, patch_gt), -1.0), 1.0);
    d::Tensor l_perc = perc.distance(patch_hat, patch_gt);

    d::Tensor total =
        d::add(d::add(l_color, d::scale(l_mask, cfg.lambda_mask)),
               d::add(d::scale(l_ssim, cfg.lambda_ssim),
                      d::scale(l_perc, cfg.lambda_perc)));

    StepOutcome out;
    out.total = total;
    out.report = {l_color.item(), l_mask.item(), l_ssim.item(), l_perc.item(),
                  total.item()};
    out.decoded_points = rr.decoded_points;
    return out;
}

namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

constexpr char kCkptMagic[4] = {'H', 'R', 'C', 'K'};

}  // namespace

void save_checkpoint(const std::string& path, model::Model& m,
                     std::uint64_t hash, int epoch, long step, Adam* opt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot write " + path);
    os.write(kCkptMagic, 4);
    write_le<std::uint32_t>(os, 1);
    write_le<std::uint64_t>(os, hash);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(epoch));
    write_le<std::uint64_t>(os, static_cast<std::uint64_t>(step));

    std::vector<std::pair<std::string, d::Tensor>> params;
    m.visit_params([&](const std::string& name, d::Tensor& t) {
        params.emplace_back(name, t);
    });
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (auto& [name, t] : params) {
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        d::save_tensor(os, t);
    }
    write_le<std::uint8_t>(os, opt ? 1 : 0);
    if (opt) {
        write_le<std::uint64_t>(os, static_cast<std::uint64_t>(opt->step_count()));
        for (Adam::Entry& e : opt->entries()) {
            d::save_tensor(os, d::Tensor::from_data({e.m.size()},
                                                    std::vector<double>(e.m)));
            d::save_tensor(os, d::Tensor::from_data({e.v.size()},
                                                    std::vector<double>(e.v)));
        }
    }
}

CheckpointInfo load_checkpoint(const std::string& path, model::Model& m,
                               std::uint64_t expected_hash, Adam* opt) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);
    if (read_le<std::uint32_t>(is) != 1)
        throw std::runtime_error("load_checkpoint: unknown version");
    CheckpointInfo info;
    info.model_hash = read_le<std::uint64_t>(is);
    if (info.model_hash != expected_hash)
        throw std::runtime_error(
            "load_checkpoint: model configuration mismatch with " + path);
    info.epoch = static_cast<int>(read_le<std::uint32_t>(is));
    info.step = static_cast<long>(read_le<std::uint64_t>(is));

    std::map<std::string, d::Tensor> by_name;
    m.visit_params([&](const std::string& name, d::Tensor& t) {
        by_name.emplace(name, t);
    });
    const auto n = read_le<std::uint32_t>(is);
    if (n != by_name.size())
        throw std::runtime_error("load_checkpoint: parameter count mismatch");
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto len = read_le<std::uint32_t>(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        d::Tensor stored = d::load_tensor(is);
        const auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("load_checkpoint: unknown parameter " + name);
        if (it->second.shape() != stored.shape())
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        auto dst = it->second.values_mut();
        std::copy(stored.values().begin(), stored.values().end(), dst.begin());
    }
    info.has_optimizer = read_le<std::uint8_t>(is) != 0;
    if (info.has_optimizer && opt) {
        opt->set_step_count(static_cast<long>(read_le<std::uint64_t>(is)));
        for (Adam::Entry& e : opt->entries()) {
            d::Tensor tm = d::load_tensor(is);
            d::Tensor tv = d::load_tensor(is);
            if (tm.numel() != e.m.size() || tv.numel() != e.v.size())
                throw std::runtime_error("load_checkpoint: moment size mismatch");
            std::copy(tm.values().begin(), tm.values().end(), e.m.begin());
            std::copy(tv.values().begin(), tv.values().end(), e.v.begin());
        }
    }
    return info;
}

TrainResult train(model::Model& m, const data::Dataset& ds, const RunConfig& cfg,
                  std::ostream& log, const std::string& out_dir,
                  const std::string& resume_from) {
    const std::uint64_t hash = model_hash(cfg);
    const loss::PerceptualNet perc(cfg.perc_seed);
    const Schedule sched{cfg.lr, cfg.lr_decay, cfg.epochs};
    Adam adam(m);

    int start_epoch = 0;
    long gstep = 0;
    TrainResult result;
    result.init_checkpoint = out_dir + "/ckpt_init.bin";
    if (!resume_from.empty()) {
        const CheckpointInfo info = load_checkpoint(resume_from, m, hash, &adam);
        start_epoch = info.epoch;
        gstep = info.step;
    } else {
        save_checkpoint(result.init_checkpoint, m, hash, 0, 0, nullptr);
    }

    const long epoch_len =
        static_cast<long>(ds.n_subjects()) * ds.frames_per_subject();
    log << "# config_hash " << std::hex << hash << std::dec << '\n';
    log << "step\tL_color\tL_mask\tL_ssim\tL_perc\ttotal\tlr\n";

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = sched.lr(epoch);
        double epoch_sum = 0.0;
        for (long i = 0; i < epoch_len; ++i) {
            const std::uint64_t step_seed = mix_seed(cfg.seed, 0x57e9ULL + gstep);
            Rng pair_rng(mix_seed(step_seed, 0x9a19ULL));
            const FramePair pair = sample_pair(ds, pair_rng);
            const StepOutcome out =
                evaluate_pair(m, ds, pair, cfg, perc, step_seed);

            const struct {
                const char* name;
                double v;
            } terms[] = {{"L_color", out.report.l_color},
                         {"L_mask", out.report.l_mask},
                         {"L_ssim", out.report.l_ssim},
                         {"L_perc", out.report.l_perc}};
            for (const auto& t : terms)
                if (!std::isfinite(t.v))
                    throw std::runtime_error(
                        std::string("train: non-finite ") + t.name + " at step " +
                        std::to_string(gstep));

            adam.zero_grads();
            d::backward(out.total);
            adam.step(lr);

            log << gstep << '\t' << out.report.l_color << '\t'
                << out.report.l_mask << '\t' << out.report.l_ssim << '\t'
                << out.report.l_perc << '\t' << out.report.total << '\t' << lr
                << '\n';
            epoch_sum += out.report.total;
            ++gstep;
        }
        result.epoch_mean_loss.push_back(epoch_sum / static_cast<double>(epoch_len));
        save_checkpoint(out_dir + "/ckpt_epoch" + std::to_string(epoch) + ".bin",
                        m, hash, epoch + 1, gstep, &adam);
    }
    result.final_checkpoint = out_dir + "/ckpt.bin";
    save_checkpoint(result.final_checkpoint, m, hash, cfg.epochs, gstep, &adam);
    result.steps = gstep;
    return result;
}

}  // namespace hrf::train
