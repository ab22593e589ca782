#pragma once

// On-disk dataset access for generated data.

#include <string>
#include <vector>

#include "hrf/body.hpp"
#include "hrf/geometry.hpp"
#include "hrf/image.hpp"

namespace hrf::data {

struct Frame {
    img::Image image;
    img::Image mask;
    geom::CameraView cam;
    std::vector<body::Vector3d> theta;
    std::vector<double> beta;
    double yaw_deg = 0.0;
    int subject = 0, pose = 0, view = 0;
    std::string id;
};

class Dataset {
  public:
    static Dataset open(const std::string& root);  // throws on bad layout

    int n_subjects() const { return subjects_; }
    int n_poses() const { return poses_; }
    int n_views() const { return views_; }
    int resolution() const { return resolution_; }
    int frames_per_subject() const { return poses_ * views_; }
    const body::BodyTemplate& body() const { return body_; }
    const std::string& root() const { return root_; }

    Frame frame(int subject, int pose, int view) const;
    std::string frame_id(int subject, int pose, int view) const;

  private:
    std::string root_;
    int subjects_ = 0, poses_ = 0, views_ = 0, resolution_ = 0;
    body::BodyTemplate body_;
};

}  // namespace hrf::data
