#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include "sonoagent/errors.hpp"
#include "sonoagent/robot_simulator.hpp"

namespace sonoagent {

namespace {

constexpr std::array<std::pair<int, int>, 4> kNeighbours{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

// Labels the 4-connected component containing `start` among pixels where
// `inside(r, c)` holds.
template <typename Inside>
PixelMask flood(int rows, int cols, PixelCoord start, Inside inside) {
    PixelMask out = PixelMask::Constant(rows, cols, false);
    std::vector<PixelCoord> stack{start};
    out(start.row, start.col) = true;
    while (!stack.empty()) {
        const auto p = stack.back();
        stack.pop_back();
        for (const auto& [dr, dc] : kNeighbours) {
            const int r = p.row + dr;
            const int c = p.col + dc;
            if (r < 0 || r >= rows || c < 0 || c >= cols || out(r, c) || !inside(r, c)) continue;
            out(r, c) = true;
            stack.push_back({r, c});
        }
    }
    return out;
}

PixelMask largest_component(const PixelMask& mask) {
    PixelMask seen = PixelMask::Constant(mask.rows(), mask.cols(), false);
    PixelMask best = PixelMask::Constant(mask.rows(), mask.cols(), false);
    Eigen::Index best_size = 0;
    for (int r = 0; r < mask.rows(); ++r) {
        for (int c = 0; c < mask.cols(); ++c) {
            if (!mask(r, c) || seen(r, c)) continue;
            auto comp = flood(static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), {r, c},
                              [&](int rr, int cc) { return mask(rr, cc); });
            seen = seen || comp;
            const auto size = comp.count();
            if (size > best_size) {
                best_size = size;
                best = std::move(comp);
            }
        }
    }
    return best;
}

int round_half_down(double v) { return static_cast<int>(std::ceil(v - 0.5)); }

}  // namespace

std::string_view to_string(ScanTarget target) {
    switch (target) {
        case ScanTarget::Carotid: return "carotid";
        case ScanTarget::Spine: return "spine";
        case ScanTarget::Rib: return "rib";
    }
    return "unknown";
}

std::optional<ScanTarget> scan_target_from_string(std::string_view name) {
    for (auto t : {ScanTarget::Carotid, ScanTarget::Spine, ScanTarget::Rib}) {
        if (to_string(t) == name) return t;
    }
    return std::nullopt;
}

ScanImage make_scan_image(std::uint64_t seed, ScanTarget target) {
    std::mt19937_64 rng(seed ^ (0xA24BAED4963EE407ULL * (static_cast<std::uint64_t>(target) + 1)));
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    PixelMask shape = PixelMask::Constant(kScanSize, kScanSize, false);
    switch (target) {
        case ScanTarget::Carotid: {
            // Vessel cross-section: a slightly flattened ellipse.
            const double cx = uniform(20, 44), cy = uniform(20, 44);
            const double a = uniform(7, 10), b = uniform(5, 7);
            for (int r = 0; r < kScanSize; ++r)
                for (int c = 0; c < kScanSize; ++c)
                    shape(r, c) = std::pow((c - cx) / a, 2) + std::pow((r - cy) / b, 2) <= 1.0;
            break;
        }
        case ScanTarget::Spine: {
            // Long axis view: a thin vertical band.
            const double cx = uniform(24, 40), cy = uniform(28, 36);
            const double a = uniform(3, 4.5), b = uniform(18, 24);
            for (int r = 0; r < kScanSize; ++r)
                for (int c = 0; c < kScanSize; ++c)
                    shape(r, c) = std::pow((c - cx) / a, 2) + std::pow((r - cy) / b, 2) <= 1.0;
            break;
        }
        case ScanTarget::Rib: {
            // Curved echo: an annular sector opening downwards.
            const double cx = uniform(28, 36), cy = uniform(40, 48);
            const double radius = uniform(16, 20), half_thickness = uniform(2.0, 2.5);
            const double span = uniform(1.6, 2.2);
            const double centre_angle = -std::numbers::pi / 2 + uniform(-0.3, 0.3);
            for (int r = 0; r < kScanSize; ++r) {
                for (int c = 0; c < kScanSize; ++c) {
                    const double dx = c - cx, dy = r - cy;
                    const double dist = std::hypot(dx, dy);
                    const double angle = std::remainder(std::atan2(dy, dx) - centre_angle, 2 * std::numbers::pi);
                    shape(r, c) = std::abs(dist - radius) <= half_thickness && std::abs(angle) <= span / 2;
                }
            }
            break;
        }
    }

    ScanImage image;
    image.target_mask = largest_component(shape);
    image.intensities = image.target_mask.select(IntensityGrid::Constant(kScanSize, kScanSize, kTargetIntensity),
                                                 IntensityGrid::Constant(kScanSize, kScanSize, kBackgroundIntensity));
    return image;
}

std::string to_pgm(const ScanImage& image) {
    std::ostringstream out;
    out << "P2\n" << image.width() << ' ' << image.height() << "\n255\n";
    for (int r = 0; r < image.height(); ++r) {
        for (int c = 0; c < image.width(); ++c) {
            if (c) out << ' ';
            out << static_cast<int>(std::lround(std::clamp(image.intensities(r, c), 0.0, 1.0) * 255.0));
        }
        out << '\n';
    }
    return out.str();
}

bool is_single_four_connected_component(const PixelMask& mask) {
    const auto total = mask.count();
    if (total == 0) return false;
    for (int r = 0; r < mask.rows(); ++r) {
        for (int c = 0; c < mask.cols(); ++c) {
            if (!mask(r, c)) continue;
            const auto comp = flood(static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), {r, c},
                                    [&](int rr, int cc) { return mask(rr, cc); });
            return comp.count() == total;
        }
    }
    return false;
}

PixelCoord seed_pixel(const ScanImage& image, std::array<double, 2> position) {
    return {round_half_down(position[1] * (image.height() - 1)), round_half_down(position[0] * (image.width() - 1))};
}

std::array<double, 2> normalized_position(const ScanImage& image, PixelCoord pixel) {
    return {static_cast<double>(pixel.col) / (image.width() - 1), static_cast<double>(pixel.row) / (image.height() - 1)};
}

SegmentationResult segment(const ScanImage& image, std::array<double, 2> position, double threshold) {
    for (double v : position) {
        if (!(v >= 0.0 && v <= 1.0)) {
            std::ostringstream msg;
            msg << "position (" << position[0] << ", " << position[1] << ") outside [0,1]^2";
            throw Error(ErrorCode::PositionOutOfRange, msg.str());
        }
    }
    if (!(threshold >= 0.0 && threshold <= 1.0)) {
        throw Error(ErrorCode::ThresholdOutOfRange, "threshold " + std::to_string(threshold) + " outside [0,1]");
    }

    SegmentationResult result;
    result.seed = seed_pixel(image, position);
    const double seed_intensity = image.intensities(result.seed.row, result.seed.col);
    result.region = flood(image.height(), image.width(), result.seed, [&](int r, int c) {
        return std::abs(image.intensities(r, c) - seed_intensity) <= threshold;
    });
    result.region_size = static_cast<std::size_t>(result.region.count());
    result.area_fraction = static_cast<double>(result.region_size) / (image.width() * image.height());
    const auto overlap = (result.region && image.target_mask).count();
    result.hit = image.target_mask.count() > 0 && 2 * overlap >= image.target_mask.count();
    return result;
}

}  // namespace sonoagent
