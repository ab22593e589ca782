#include "hrf/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace hrf::data {

Dataset Dataset::open(const std::string& root) {
    Dataset ds;
    ds.root_ = root;
    std::ifstream meta(root + "/meta.txt");
    if (!meta)
        throw std::runtime_error("Dataset: missing " + root + "/meta.txt");
    std::string tag;
    int version;
    meta >> tag >> version;
    if (tag != "hrfdata" || version != 1)
        throw std::runtime_error("Dataset: unrecognized meta header in " + root);
    std::string key;
    std::uint64_t seed;
    meta >> key >> ds.subjects_ >> key >> ds.poses_ >> key >> ds.views_ >> key >>
        ds.resolution_ >> key >> seed;
    if (!meta || ds.subjects_ < 1 || ds.poses_ < 1 || ds.views_ < 1)
        throw std::runtime_error("Dataset: malformed meta.txt in " + root);

    std::ifstream body_is(root + "/body.txt");
    if (!body_is)
        throw std::runtime_error("Dataset: missing " + root + "/body.txt");
    ds.body_ = body::load_template(body_is);
    return ds;
}

std::string Dataset::frame_id(int subject, int pose, int view) const {
    std::ostringstream os;
    os << "subject_" << std::setw(3) << std::setfill('0') << subject
       << "/frame_p" << std::setw(3) << std::setfill('0') << pose << "_v"
       << std::setw(3) << std::setfill('0') << view;
    return os.str();
}

Frame Dataset::frame(int subject, int pose, int view) const {
    if (subject < 0 || subject >= subjects_ || pose < 0 || pose >= poses_ ||
        view < 0 || view >= views_)
        throw std::runtime_error("Dataset: frame index out of range");
    Frame f;
    f.subject = subject;
    f.pose = pose;
    f.view = view;
    f.id = frame_id(subject, pose, view);
    const std::string base = root_ + "/" + f.id;
    if (!std::filesystem::exists(base + ".png"))
        throw std::runtime_error("Dataset: missing frame " + base + ".png");
    f.image = img::read_png(base + ".png");
    f.mask = img::read_png(base + "_mask.png");

    std::ifstream side(base + ".txt");
    if (!side) throw std::runtime_error("Dataset: missing sidecar " + base + ".txt");
    f.cam = geom::read_camera(side);
    std::string key;
    side >> key >> f.yaw_deg;
    std::size_t k;
    side >> key >> k;
    f.theta.resize(k);
    for (auto& t : f.theta) side >> t.x() >> t.y() >> t.z();
    std::size_t b;
    side >> key >> b;
    f.beta.resize(b);
    for (auto& x : f.beta) side >> x;
    if (!side) throw std::runtime_error("Dataset: malformed sidecar " + base);
    return f;
}

}  // namespace hrf::data
