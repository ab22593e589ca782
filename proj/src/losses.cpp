#include "hrf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "hrf/rng.hpp"
#include "hrf/tensor_ops.hpp"

namespace hrf::loss {

namespace d = hrf::diff;

double assemble_total(const LossReport& r, const LossWeights& w) {
    return r.l_color + w.lambda_mask * r.l_mask + w.lambda_ssim * r.l_ssim +
           w.lambda_perc * r.l_perc;
}

diff::Tensor photometric(const diff::Tensor& c_hat, const diff::Tensor& c_gt) {
    if (c_hat.shape() != c_gt.shape() || c_hat.rank() != 2)
        throw std::invalid_argument("photometric: want matching [R,3] batches");
    if (c_hat.shape()[0] == 0)
        throw std::invalid_argument("photometric: empty ray set");
    d::Tensor diff = d::sub(c_hat, c_gt);
    return d::mean(d::sum(d::mul(diff, diff), 1));
}

diff::Tensor mask_loss(const diff::Tensor& m_hat, const diff::Tensor& m_gt) {
    if (m_hat.shape() != m_gt.shape())
        throw std::invalid_argument("mask_loss: shape mismatch");
    if (m_hat.numel() == 0) throw std::invalid_argument("mask_loss: empty ray set");
    d::Tensor diff = d::sub(m_hat, m_gt);
    return d::mean(d::mul(diff, diff));
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

d::Tensor gaussian_window() {
    std::vector<double> k(kWin * kWin);
    double total = 0.0;
    for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) {
            const double dx = x - (kWin - 1) / 2.0, dy = y - (kWin - 1) / 2.0;
            const double v = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
            k[y * kWin + x] = v;
            total += v;
        }
    for (auto& v : k) v /= total;
    return d::Tensor::from_data({1, 1, kWin, kWin}, std::move(k));
}

// Gaussian-window mean of a single-channel [1,H,W] tensor, valid windows.
d::Tensor wmean(const d::Tensor& x, const d::Tensor& win) {
    return d::conv2d(x, win, d::Tensor(), 1, 0);
}

}  // namespace

diff::Tensor ssim(const diff::Tensor& a, const diff::Tensor& b) {
    if (a.shape() != b.shape() || a.rank() != 3)
        throw std::invalid_argument("ssim: want matching [C,H,W] patches");
    const std::size_t c = a.shape()[0];
    const int h = static_cast<int>(a.shape()[1]);
    const int w = static_cast<int>(a.shape()[2]);
    if (h < kWin || w < kWin)
        throw std::invalid_argument("ssim: patch smaller than the 11x11 window");

    const d::Tensor win = gaussian_window();
    d::Tensor acc;
    for (std::size_t ch = 0; ch < c; ++ch) {
        d::Tensor x = d::narrow(a, 0, ch, 1);
        d::Tensor y = d::narrow(b, 0, ch, 1);
        d::Tensor mx = wmean(x, win);
        d::Tensor my = wmean(y, win);
        d::Tensor mxy = d::mul(mx, my);
        d::Tensor mx2 = d::mul(mx, mx);
        d::Tensor my2 = d::mul(my, my);
        d::Tensor sx = d::sub(wmean(d::mul(x, x), win), mx2);
        d::Tensor sy = d::sub(wmean(d::mul(y, y), win), my2);
        d::Tensor sxy = d::sub(wmean(d::mul(x, y), win), mxy);

        d::Tensor num = d::mul(d::add_scalar(d::scale(mxy, 2.0), kC1),
                               d::add_scalar(d::scale(sxy, 2.0), kC2));
        d::Tensor den = d::mul(d::add_scalar(d::add(mx2, my2), kC1),
                               d::add_scalar(d::add(sx, sy), kC2));
        d::Tensor m = d::mean(d::divide(num, den));
        acc = ch == 0 ? m : d::add(acc, m);
    }
    return d::scale(acc, 1.0 / static_cast<double>(c));
}

PerceptualNet::PerceptualNet(std::uint64_t seed) {
    Rng rng(seed);
    for (int s = 0; s < 3; ++s) {
        std::vector<double> w(16 * 3 * 3 * 3);
        const double a = 1.0 / std::sqrt(27.0);
        for (auto& v : w) v = rng.uniform(-a, a);
        filt_[s] = d::Tensor::from_data({16, 3, 3, 3}, std::move(w));
    }
}

namespace {

d::Tensor normalized_response(const d::Tensor& x, const d::Tensor& filt) {
    d::Tensor r = d::conv2d(x, filt, d::Tensor(), 1, 1);  // [16,h,w]
    const std::size_t h = r.shape()[1], w = r.shape()[2];
    d::Tensor n2 = d::reshape(d::sum(d::mul(r, r), 0), {1, h, w});
    return d::divide(r, d::sqrt(d::add_scalar(n2, 1e-10)));
}

}  // namespace

diff::Tensor PerceptualNet::distance(const diff::Tensor& a,
                                     const diff::Tensor& b) const {
    if (a.shape() != b.shape() || a.rank() != 3 || a.shape()[0] != 3)
        throw std::invalid_argument("perceptual: want matching [3,H,W] images");
    if (a.shape()[1] % 4 || a.shape()[2] % 4)
        throw std::invalid_argument("perceptual: dimensions must be divisible by 4");
    d::Tensor xa = a, xb = b, acc;
    for (int s = 0; s < 3; ++s) {
        d::Tensor diff = d::sub(normalized_response(xa, filt_[s]),
                                normalized_response(xb, filt_[s]));
        d::Tensor m = d::mean(d::mul(diff, diff));
        acc = s == 0 ? m : d::add(acc, m);
        if (s < 2) {
            xa = d::avg_pool2(xa);
            xb = d::avg_pool2(xb);
        }
    }
    return d::scale(acc, 1.0 / 3.0);
}

diff::Tensor image_tensor(const img::Image& image) {
    const std::size_t c = image.channels, h = image.height, w = image.width;
    std::vector<double> v(c * h * w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                v[(ch * h + y) * w + x] = image.at(static_cast<int>(x),
                                                   static_cast<int>(y),
                                                   static_cast<int>(ch));
    return d::Tensor::from_data({c, h, w}, std::move(v));
}

img::Image tensor_image(const diff::Tensor& t) {
    if (t.rank() != 3) throw std::invalid_argument("tensor_image: want [C,H,W]");
    const int c = static_cast<int>(t.shape()[0]);
    const int h = static_cast<int>(t.shape()[1]);
    const int w = static_cast<int>(t.shape()[2]);
    img::Image im = img::make_image(w, h, c);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                im.at(x, y, ch) = t[(static_cast<std::size_t>(ch) * h + y) * w + x];
    return im;
}

std::optional<PixelRect> project_aabb(const geom::CameraView& cam,
                                      const geom::Aabb& box) {
    double u0 = std::numeric_limits<double>::max(), v0 = u0;
    double u1 = std::numeric_limits<double>::lowest(), v1 = u1;
    int in_front = 0;
    for (int i = 0; i < 8; ++i) {
        const geom::Vector3d corner(i & 1 ? box.max.x() : box.min.x(),
                                    i & 2 ? box.max.y() : box.min.y(),
                                    i & 4 ? box.max.z() : box.min.z());
        const geom::Vector3d xc = cam.R * corner + cam.t;
        if (xc.z() <= 1e-9) continue;
        ++in_front;
        const double u = cam.K(0, 0) * xc.x() / xc.z() + cam.K(0, 2);
        const double v = cam.K(1, 1) * xc.y() / xc.z() + cam.K(1, 2);
        u0 = std::min(u0, u);
        u1 = std::max(u1, u);
        v0 = std::min(v0, v);
        v1 = std::max(v1, v);
    }
    if (in_front == 0) return std::nullopt;
    PixelRect r;
    r.x0 = std::clamp(static_cast<int>(std::floor(u0)), 0, cam.width);
    r.x1 = std::clamp(static_cast<int>(std::ceil(u1)), 0, cam.width);
    r.y0 = std::clamp(static_cast<int>(std::floor(v0)), 0, cam.height);
    r.y1 = std::clamp(static_cast<int>(std::ceil(v1)), 0, cam.height);
    if (r.x0 >= r.x1 || r.y0 >= r.y1) return std::nullopt;
    return r;
}

double psnr(const img::Image& a, const img::Image& b,
            const std::optional<PixelRect>& mask) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw std::invalid_argument("psnr: image dimensions differ");
    const PixelRect r = mask.value_or(PixelRect{0, 0, a.width, a.height});
    double se = 0.0;
    std::size_t n = 0;
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x)
            for (int c = 0; c < a.channels; ++c) {
                const double d = a.at(x, y, c) - b.at(x, y, c);
                se += d * d;
                ++n;
            }
    if (n == 0) throw std::invalid_argument("psnr: empty mask");
    const double mse = se / static_cast<double>(n);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim_masked(const img::Image& a, const img::Image& b,
                   const std::optional<PixelRect>& mask) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw std::invalid_argument("ssim_masked: image dimensions differ");
    PixelRect r = mask.value_or(PixelRect{0, 0, a.width, a.height});
    // Grow undersized crops to the window size where the image allows.
    auto widen = [](int& lo, int& hi, int limit) {
        while (hi - lo < kWin && (lo > 0 || hi < limit)) {
            if (lo > 0) --lo;
            if (hi - lo < kWin && hi < limit) ++hi;
        }
    };
    widen(r.x0, r.x1, a.width);
    widen(r.y0, r.y1, a.height);

    auto crop = [&](const img::Image& im) {
        img::Image c = img::make_image(r.width(), r.height(), im.channels);
        for (int y = 0; y < r.height(); ++y)
            for (int x = 0; x < r.width(); ++x)
                for (int ch = 0; ch < im.channels; ++ch)
                    c.at(x, y, ch) = im.at(r.x0 + x, r.y0 + y, ch);
        return c;
    };
    d::NoGradGuard ng;
    return ssim(image_tensor(crop(a)), image_tensor(crop(b))).item();
}

}  // namespace hrf::loss
