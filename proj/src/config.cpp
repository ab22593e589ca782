#include "hrf/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace hrf {

namespace {

struct KeyTable {
    std::map<std::string, std::function<void(RunConfig&, const std::string&)>> set;

    template <typename T>
    static T parse_num(const std::string& key, const std::string& v) {
        std::istringstream is(v);
        T out;
        is >> out;
        if (!is || !is.eof())
            throw std::invalid_argument("config: bad value '" + v + "' for key " + key);
        return out;
    }

    void num_int(const std::string& k, int RunConfig::*field) {
        set[k] = [k, field](RunConfig& c, const std::string& v) {
            c.*field = parse_num<int>(k, v);
        };
    }
    void num_dbl(const std::string& k, double RunConfig::*field) {
        set[k] = [k, field](RunConfig& c, const std::string& v) {
            c.*field = parse_num<double>(k, v);
        };
    }
    void num_u64(const std::string& k, std::uint64_t RunConfig::*field) {
        set[k] = [k, field](RunConfig& c, const std::string& v) {
            c.*field = parse_num<std::uint64_t>(k, v);
        };
    }
    void str(const std::string& k, std::string RunConfig::*field) {
        set[k] = [field](RunConfig& c, const std::string& v) { c.*field = v; };
    }
    void flag(const std::string& k, bool RunConfig::*field) {
        set[k] = [k, field](RunConfig& c, const std::string& v) {
            if (v == "on" || v == "true" || v == "1")
                c.*field = true;
            else if (v == "off" || v == "false" || v == "0")
                c.*field = false;
            else
                throw std::invalid_argument("config: bad flag '" + v + "' for key " + k);
        };
    }
};

const KeyTable& key_table() {
    static const KeyTable table = [] {
        KeyTable t;
        t.str("dataset_dir", &RunConfig::dataset_dir);
        t.str("out_dir", &RunConfig::out_dir);
        t.str("checkpoint", &RunConfig::checkpoint);
        t.num_u64("seed", &RunConfig::seed);
        t.num_int("gen_train_subjects", &RunConfig::gen_train_subjects);
        t.num_int("gen_test_subjects", &RunConfig::gen_test_subjects);
        t.num_int("gen_poses", &RunConfig::gen_poses);
        t.num_int("gen_views", &RunConfig::gen_views);
        t.num_int("resolution", &RunConfig::resolution);
        t.num_dbl("cam_radius", &RunConfig::cam_radius);
        t.num_dbl("focal_factor", &RunConfig::focal_factor);
        t.num_int("n_samples", &RunConfig::n_samples);
        t.flag("jitter", &RunConfig::jitter);
        t.num_dbl("aabb_margin", &RunConfig::aabb_margin);
        t.num_dbl("background", &RunConfig::background);
        t.num_int("latent_dim", &RunConfig::latent_dim);
        t.num_int("encoder_width", &RunConfig::encoder_width);
        t.num_int("map_channels", &RunConfig::map_channels);
        t.num_int("posenc_rgb", &RunConfig::posenc_rgb);
        t.num_int("plane_channels", &RunConfig::plane_channels);
        t.num_int("plane_res", &RunConfig::plane_res);
        t.num_int("plane_base", &RunConfig::plane_base);
        t.num_int("style_dim", &RunConfig::style_dim);
        t.num_int("synth_channels", &RunConfig::synth_channels);
        t.num_int("mapping_hidden", &RunConfig::mapping_hidden);
        t.num_int("voxel_grid", &RunConfig::voxel_grid);
        t.num_int("point_feat_dim", &RunConfig::point_feat_dim);
        t.num_int("token_channels", &RunConfig::token_channels);
        t.num_int("heads", &RunConfig::heads);
        t.str("fusion_reduction", &RunConfig::fusion_reduction);
        t.num_int("decoder_hidden", &RunConfig::decoder_hidden);
        t.num_int("decoder_layers", &RunConfig::decoder_layers);
        t.num_int("posenc_xyz", &RunConfig::posenc_xyz);
        t.num_dbl("gate_threshold", &RunConfig::gate_threshold);
        t.num_dbl("gate_sigma", &RunConfig::gate_sigma);
        t.num_dbl("lambda_mask", &RunConfig::lambda_mask);
        t.num_dbl("lambda_ssim", &RunConfig::lambda_ssim);
        t.num_dbl("lambda_perc", &RunConfig::lambda_perc);
        t.num_u64("perc_seed", &RunConfig::perc_seed);
        t.num_int("ssim_patch", &RunConfig::ssim_patch);
        t.num_dbl("lr", &RunConfig::lr);
        t.num_dbl("lr_decay", &RunConfig::lr_decay);
        t.num_int("epochs", &RunConfig::epochs);
        t.num_int("rays_per_step", &RunConfig::rays_per_step);
        t.num_dbl("mask_bias", &RunConfig::mask_bias);
        return t;
    }();
    return table;
}

}  // namespace

void RunConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
    if (resolution < 16 || resolution % 4) fail("resolution must be >=16, divisible by 4");
    if (n_samples < 1) fail("n_samples must be >= 1");
    if (token_channels < 1 || heads < 1 || token_channels % heads)
        fail("token_channels must be divisible by heads");
    if (fusion_reduction != "concat" && fusion_reduction != "mean")
        fail("fusion_reduction must be concat or mean");
    if (ssim_patch < 12 || ssim_patch % 4) fail("ssim_patch must be >=12, divisible by 4");
    if (rays_per_step <= ssim_patch * ssim_patch)
        fail("rays_per_step must exceed the ssim patch area");
    if (epochs < 1) fail("epochs must be >= 1");
    if (gate_threshold <= 0) fail("gate_threshold must be positive");
    if (mask_bias < 0 || mask_bias > 1) fail("mask_bias must be in [0,1]");
    int r = plane_base;
    while (r < plane_res) r *= 2;
    if (r != plane_res) fail("plane_res must be plane_base * 2^n");
}

void apply_config_stream(RunConfig& cfg, std::istream& is) {
    const KeyTable& table = key_table();
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key, value;
        if (!(ls >> key)) continue;
        std::getline(ls, value);
        const auto a = value.find_first_not_of(" \t");
        value = a == std::string::npos ? std::string() : value.substr(a);
        const auto b = value.find_last_not_of(" \t\r");
        if (b != std::string::npos) value.erase(b + 1);
        const auto it = table.set.find(key);
        if (it == table.set.end())
            throw std::invalid_argument("config: unknown key '" + key + "' on line " +
                                        std::to_string(lineno));
        it->second(cfg, value);
    }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path);
    apply_config_stream(cfg, is);
}

std::uint64_t model_hash(const RunConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "latent_dim " << c.latent_dim << "\nencoder_width " << c.encoder_width
       << "\nmap_channels " << c.map_channels << "\nposenc_rgb " << c.posenc_rgb
       << "\nplane_channels " << c.plane_channels << "\nplane_res " << c.plane_res
       << "\nplane_base " << c.plane_base << "\nstyle_dim " << c.style_dim
       << "\nsynth_channels " << c.synth_channels << "\nmapping_hidden "
       << c.mapping_hidden << "\nvoxel_grid " << c.voxel_grid
       << "\npoint_feat_dim " << c.point_feat_dim << "\ntoken_channels "
       << c.token_channels << "\nheads " << c.heads << "\nfusion_reduction "
       << c.fusion_reduction << "\ndecoder_hidden " << c.decoder_hidden
       << "\ndecoder_layers " << c.decoder_layers << "\nposenc_xyz "
       << c.posenc_xyz << "\ngate_threshold " << c.gate_threshold
       << "\ngate_sigma " << c.gate_sigma << "\n";
    const std::string s = os.str();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string model_hash_hex(const RunConfig& cfg) {
    std::ostringstream os;
    os << std::hex << model_hash(cfg);
    return os.str();
}

}  // namespace hrf
