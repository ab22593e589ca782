#include "hrf/model.hpp"

namespace hrf::model {

Model Model::build(const RunConfig& cfg) {
    cfg.validate();
    Model m;
    m.enc_cfg = {cfg.encoder_width, cfg.map_channels, cfg.latent_dim,
                 cfg.posenc_rgb};
    m.tri_cfg = {cfg.plane_channels, cfg.plane_res,      cfg.plane_base,
                 cfg.style_dim,      cfg.mapping_hidden, cfg.synth_channels};
    m.vol_cfg = {cfg.voxel_grid, cfg.point_feat_dim};
    m.fus_cfg = {cfg.token_channels, cfg.heads,
                 cfg.fusion_reduction == "mean" ? fusion::Reduction::kMean
                                                : fusion::Reduction::kConcat};
    m.dec_cfg = {cfg.posenc_xyz, cfg.decoder_hidden, cfg.decoder_layers,
                 cfg.gate_sigma};
    m.gate_threshold = cfg.gate_threshold;

    Rng rng(mix_seed(cfg.seed, 0x6d6f64656cULL));
    const int map_total = cfg.map_channels + feat::appended_channels(m.enc_cfg);
    m.enc.init(m.enc_cfg, rng);
    m.tri.init(cfg.latent_dim, m.tri_cfg, rng);
    m.vol.init(map_total, m.vol_cfg, rng);
    m.fus.init(cfg.plane_channels, cfg.point_feat_dim, map_total, m.fus_cfg, rng);
    m.dec.init(fusion::fused_dim(m.fus_cfg), m.dec_cfg, rng);
    return m;
}

void Model::visit_params(
    const std::function<void(const std::string&, diff::Tensor&)>& fn) {
    fn("enc.stem_w", enc.stem_w);
    fn("enc.stem_b", enc.stem_b);
    for (int i = 0; i < 4; ++i) {
        fn("enc.down" + std::to_string(i) + "_w", enc.down_w[i]);
        fn("enc.down" + std::to_string(i) + "_b", enc.down_b[i]);
    }
    fn("enc.latent_w", enc.latent_w);
    fn("enc.latent_b", enc.latent_b);
    fn("enc.col_w", enc.col_w);
    fn("enc.col_b", enc.col_b);

    fn("tri.map_w1", tri.map_w1);
    fn("tri.map_b1", tri.map_b1);
    fn("tri.map_w2", tri.map_w2);
    fn("tri.map_b2", tri.map_b2);
    fn("tri.const0", tri.const0);
    for (std::size_t l = 0; l < tri.up_w.size(); ++l) {
        fn("tri.up" + std::to_string(l) + "_w", tri.up_w[l]);
        fn("tri.up" + std::to_string(l) + "_b", tri.up_b[l]);
        fn("tri.style" + std::to_string(l) + "_w", tri.style_w[l]);
        fn("tri.style" + std::to_string(l) + "_b", tri.style_b[l]);
    }
    fn("tri.out_w", tri.out_w);
    fn("tri.out_b", tri.out_b);

    for (std::size_t l = 0; l < vol.w.size(); ++l) {
        fn("vol.conv" + std::to_string(l) + "_w", vol.w[l]);
        fn("vol.conv" + std::to_string(l) + "_b", vol.b[l]);
    }

    for (int i = 0; i < 3; ++i) {
        fn("fus.proj" + std::to_string(i) + "_w", fus.proj_w[i]);
        fn("fus.proj" + std::to_string(i) + "_b", fus.proj_b[i]);
    }
    fn("fus.wq", fus.wq);
    fn("fus.bq", fus.bq);
    fn("fus.wk", fus.wk);
    fn("fus.bk", fus.bk);
    fn("fus.wv", fus.wv);
    fn("fus.bv", fus.bv);
    fn("fus.wo", fus.wo);
    fn("fus.bo", fus.bo);

    for (std::size_t l = 0; l < dec.w.size(); ++l) {
        fn("dec.h" + std::to_string(l) + "_w", dec.w[l]);
        fn("dec.h" + std::to_string(l) + "_b", dec.b[l]);
    }
    fn("dec.sigma_w", dec.sigma_w);
    fn("dec.sigma_b", dec.sigma_b);
    fn("dec.rgb_w", dec.rgb_w);
    fn("dec.rgb_b", dec.rgb_b);
}

}  // namespace hrf::model
