#pragma once

// Training losses and evaluation metrics. SSIM and the perceptual
// distance operate on [C,H,W] tensors and are differentiable; PSNR is a
// plain metric over float images with optional rectangle masking.

#include <optional>

#include "hrf/geometry.hpp"
#include "hrf/image.hpp"
#include "hrf/tensor.hpp"

namespace hrf::loss {

struct LossWeights {
    double lambda_mask = 0.1;
    double lambda_ssim = 0.01;
    double lambda_perc = 0.01;
};

struct LossReport {
    double l_color = 0.0;
    double l_mask = 0.0;
    double l_ssim = 0.0;  // the minimized term, 1 - SSIM
    double l_perc = 0.0;
    double total = 0.0;
};

double assemble_total(const LossReport& r, const LossWeights& w);

// Mean over rays of the squared L2 color error; inputs [R,3].
diff::Tensor photometric(const diff::Tensor& c_hat, const diff::Tensor& c_gt);

// Mean squared error between accumulated opacity and the binary mask; [R].
diff::Tensor mask_loss(const diff::Tensor& m_hat, const diff::Tensor& m_gt);

// Windowed SSIM in [-1,1]: 11x11 Gaussian window (std 1.5), C1=0.01^2,
// C2=0.03^2, mean over valid windows and channels. Inputs [C,H,W] in [0,1].
diff::Tensor ssim(const diff::Tensor& a, const diff::Tensor& b);

// Fixed seeded multi-scale random-filter distance standing in for a
// learned perceptual metric: 3 scales x 16 filters, responses normalized
// per pixel across channels, mean squared difference.
class PerceptualNet {
  public:
    PerceptualNet(std::uint64_t seed);
    diff::Tensor distance(const diff::Tensor& a, const diff::Tensor& b) const;

  private:
    diff::Tensor filt_[3];
};

// [C,H,W] tensor from a float image and back.
diff::Tensor image_tensor(const img::Image& image);
img::Image tensor_image(const diff::Tensor& t);

struct PixelRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0,x1) x [y0,y1)
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool contains(int x, int y) const {
        return x >= x0 && x < x1 && y >= y0 && y < y1;
    }
};

// Screen rectangle covering the projected corners of a 3D box, clamped to
// the image; nullopt when every corner is behind the camera.
std::optional<PixelRect> project_aabb(const geom::CameraView& cam,
                                      const geom::Aabb& box);

// 10*log10(1/MSE) over masked pixels; +infinity when MSE == 0.
double psnr(const img::Image& a, const img::Image& b,
            const std::optional<PixelRect>& mask = std::nullopt);

// SSIM over the masked crop (expanded to the 11-pixel window minimum).
double ssim_masked(const img::Image& a, const img::Image& b,
                   const std::optional<PixelRect>& mask = std::nullopt);

}  // namespace hrf::loss
