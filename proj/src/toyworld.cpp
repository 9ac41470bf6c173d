#include "fm3d/toyworld.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "fm3d/errors.hpp"
#include "fm3d/seed.hpp"

namespace fm3d::toyworld {
namespace {

constexpr int kIdentitySlots = 16;
constexpr int kExpressionSlots = 8;
constexpr double kMinFaceLevel = 3.0 / 255.0;

// Attribute `slot` of a coefficient block whose length may exceed the
// number of slots (paper-sized dims): components fold onto slots with
// geometrically decaying weight.
double attr(const std::vector<double>& v, int slot, int slots) {
    double s = 0.0;
    for (std::size_t i = static_cast<std::size_t>(slot); i < v.size(); i += static_cast<std::size_t>(slots)) {
        const auto fold = static_cast<int>(i) / slots;
        s += v[i] * (fold == 0 ? 1.0 : 0.5 / fold);
    }
    return std::clamp(s, -3.5, 3.5);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Rgb {
    double r = 0, g = 0, b = 0;
    Rgb operator*(double s) const { return {r * s, g * s, b * s}; }
    Rgb operator+(const Rgb& o) const { return {r + o.r, g + o.g, b + o.b}; }
    double operator[](int c) const { return c == 0 ? r : (c == 1 ? g : b); }
};

Rgb mix(const Rgb& x, const Rgb& y, double t) { return x * (1.0 - t) + y * t; }

// Everything the renderer needs, precomputed once per FaceParams.
struct FaceLook {
    FaceGeometry g;
    double eye_sep, eye_y, eye_w;
    std::array<double, 2> eye_h;
    Rgb iris;
    double mouth_y, mouth_w, curv, mouth_open;
    Rgb lip;
    double nose_r;
    double brow_y, brow_thick, brow_tilt;
    Rgb brow;
    double jaw_n;
    Rgb skin;
    double forehead, blush;
    double mole_u, mole_v;
    // Shading: coefficient of SH basis j for channel c.
    std::array<std::array<double, 9>, 3> sh{};
    double yaw, pitch;
};

struct ExprAttrs {
    double eye_open, smile, mouth_open, brow_raise, wink, mouth_width, brow_tilt, cheek;
};

ExprAttrs expression_attrs(const std::vector<double>& beta) {
    auto b = [&](int slot) { return attr(beta, slot, kExpressionSlots); };
    return {b(0), b(1), b(2), b(3), b(4), b(5), b(6), b(7)};
}

FaceLook make_look(const FaceParams& p) {
    FaceLook f;
    auto a = [&](int slot) { return attr(p.alpha, slot, kIdentitySlots); };
    const ExprAttrs e = expression_attrs(p.beta);

    f.g = face_geometry(p);
    f.eye_sep = 0.40 + 0.04 * a(2);
    f.eye_y = -0.22 + 0.03 * a(3);
    f.eye_w = 0.17 + 0.02 * a(4);
    const double open = std::clamp(0.55 + 0.22 * e.eye_open, 0.05, 1.3);
    const double wink = std::clamp(0.25 * e.wink, -0.6, 0.6);
    f.eye_h = {0.11 * open * (1.0 + wink), 0.11 * open * (1.0 - wink)};
    f.iris = mix(Rgb{0.25, 0.45, 0.70}, Rgb{0.40, 0.25, 0.12}, sigmoid(1.2 * a(10)));

    f.mouth_y = 0.48 + 0.035 * a(5);
    f.mouth_w = std::clamp(0.30 + 0.04 * e.mouth_width, 0.15, 0.45);
    f.curv = 0.09 * e.smile;
    f.mouth_open = std::max(0.0, 0.02 + 0.025 * e.mouth_open);
    const double red = 0.55 + 0.08 * a(11);
    f.lip = {std::clamp(red + 0.2, 0.3, 1.0), 0.30, 0.32};

    f.nose_r = std::clamp(0.10 + 0.018 * a(8), 0.04, 0.2);
    f.brow_y = f.eye_y - 0.17 - 0.03 * e.brow_raise;
    f.brow_thick = std::clamp(0.05 + 0.01 * a(9), 0.02, 0.09);
    f.brow_tilt = 0.04 * e.brow_tilt;
    const double bd = std::clamp(0.25 - 0.05 * a(9), 0.05, 0.5);
    f.brow = {bd, bd * 0.75, bd * 0.55};

    f.jaw_n = std::clamp(2.0 + 0.3 * a(12), 1.4, 3.0);
    const double light = 0.72 + 0.06 * a(6);
    const double warm = 0.05 * a(7);
    f.skin = {light + warm, light * 0.83, light * 0.70 - 0.5 * warm};
    f.forehead = 0.05 * a(14);
    f.blush = 0.06 * a(13);
    f.mole_u = 0.45 * std::cos(a(15));
    f.mole_v = 0.15 + 0.2 * std::sin(a(15));

    // Lighting: coefficient k drives SH basis k % 9; with >= 27 coefficients
    // each consecutive group of 9 drives one color channel.
    static constexpr std::array<double, 9> kBandWeight = {0.07, 0.13, 0.13, 0.13, 0.05, 0.05, 0.05, 0.05, 0.05};
    const bool per_channel = p.gamma.size() >= 27;
    for (std::size_t k = 0; k < p.gamma.size(); ++k) {
        const std::size_t j = k % 9;
        const double w = kBandWeight[j] * p.gamma[k] / (1.0 + static_cast<double>(k / 27));
        if (per_channel) {
            f.sh[(k / 9) % 3][j] += w;
        } else {
            for (auto& ch : f.sh) ch[j] += w;
        }
    }
    f.yaw = p.yaw();
    f.pitch = p.pitch();
    return f;
}

bool inside_face(const FaceLook& f, double u, double v) {
    if (v <= 0.0) return u * u + v * v <= 1.0;
    return std::pow(std::abs(u), f.jaw_n) + std::pow(v, f.jaw_n) <= 1.0;
}

double shading(const FaceLook& f, double u, double v, int channel) {
    const double r2 = std::min(1.0, u * u + v * v);
    double nx = u, ny = -v, nz = std::sqrt(1.0 - r2);
    // Rotate the sphere normal by yaw (vertical axis) then pitch.
    const double cy = std::cos(f.yaw), sy = std::sin(f.yaw);
    const double nx1 = nx * cy + nz * sy, nz1 = -nx * sy + nz * cy;
    const double cp = std::cos(f.pitch), sp = std::sin(f.pitch);
    const double ny2 = ny * cp - nz1 * sp, nz2 = ny * sp + nz1 * cp;
    nx = nx1;
    ny = ny2;
    nz = nz2;
    const std::array<double, 9> basis = {1.0,     ny,      nz, nx, nx * ny, ny * nz, 3.0 * nz * nz - 1.0,
                                         nx * nz, nx * nx - ny * ny};
    double s = 0.78;
    for (int j = 0; j < 9; ++j) s += f.sh[channel][j] * basis[j];
    return std::clamp(s, 0.25, 1.5);
}

Rgb albedo(const FaceLook& f, double u, double v) {
    Rgb c = f.skin;
    if (v < -0.45) c = c * (1.0 + f.forehead);
    for (double side : {-1.0, 1.0}) {
        const double du = u - side * 0.52, dv = v - 0.18;
        const double w = std::exp(-(du * du + dv * dv) / 0.04);
        c = c + Rgb{0.10 * f.blush * w, -0.03 * f.blush * w, -0.03 * f.blush * w};
    }
    // Nose, in pre-rotation image units so it carries the depth parallax.
    {
        const double x = u * f.g.a - f.g.depth_dx;
        const double y = v * f.g.b - (0.08 * f.g.b + f.g.depth_dy);
        const double rx = f.nose_r * f.g.a0, ry = f.nose_r * f.g.b0 * 0.8;
        const double d = (x * x) / (rx * rx) + (y * y) / (ry * ry);
        if (d <= 1.0) c = c * (0.80 + 0.1 * d);
        if (d <= 0.15) c = c * 0.6;
    }
    {
        const double du = u - f.mole_u, dv = v - f.mole_v;
        if (du * du + dv * dv < 0.045 * 0.045) c = {0.35, 0.22, 0.15};
    }
    for (int s = 0; s < 2; ++s) {
        const double side = s == 0 ? -1.0 : 1.0;
        const double ec = side * f.eye_sep;
        // brow
        if (std::abs(u - ec) < f.eye_w * 1.15) {
            const double vb = f.brow_y - f.brow_tilt * (std::abs(u) - f.eye_sep) / f.eye_w;
            if (std::abs(v - vb) < f.brow_thick) c = f.brow;
        }
        // lid line, visible when the eye is (nearly) closed
        if (std::abs(u - ec) < f.eye_w && std::abs(v - f.eye_y) < 0.025) c = {0.30, 0.20, 0.18};
        const double du = (u - ec) / f.eye_w, dv = (v - f.eye_y) / f.eye_h[static_cast<std::size_t>(s)];
        if (du * du + dv * dv <= 1.0) {
            const double ri = 0.45 * f.eye_w;
            const double dist = std::hypot(u - ec, v - f.eye_y);
            if (dist < 0.45 * ri) c = {0.05, 0.05, 0.06};
            else if (dist < ri) c = f.iris;
            else c = {0.95, 0.95, 0.93};
        }
    }
    if (std::abs(u) < f.mouth_w) {
        const double t = u / f.mouth_w;
        const double vc = f.mouth_y - f.curv * t * t;
        const double dv = std::abs(v - vc);
        if (dv < f.mouth_open) c = {0.15, 0.05, 0.05};
        else if (dv < f.mouth_open + 0.05) c = f.lip;
    }
    return c;
}

std::uint64_t hash_alpha(const std::vector<double>& alpha, std::uint64_t noise_seed) {
    std::uint64_t h = splitmix64(noise_seed ^ 0x6e756973ull);
    for (double a : alpha) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(a));
    return h;
}

// Image-space nuisance: background, hair, and the freckle pattern carried in
// face-local coordinates. Depends only on (alpha, noise_seed, style).
struct Nuisance {
    struct Grating {
        double fx, fy, phase, amp;
        Rgb color;
    };
    Rgb base;
    double grad_x, grad_y;
    std::vector<Grating> gratings;
    bool checker = false;
    double checker_freq = 4, checker_amp = 0;
    Rgb hair;
    double hair_cx, hair_cy, hair_ax, hair_ay, hair_cut, hair_stripe;
    struct Spot {
        double u, v, r, dark;
    };
    std::vector<Spot> freckles;

    Rgb background(double x, double y) const {
        Rgb c = base + Rgb{1, 1, 1} * (grad_x * (x - 0.5) + grad_y * (y - 0.5));
        for (const auto& g : gratings) {
            const double s = std::sin(2.0 * std::numbers::pi * (g.fx * x + g.fy * y) + g.phase);
            c = c + g.color * (g.amp * s);
        }
        if (checker) {
            const int k = static_cast<int>(std::floor(x * checker_freq)) + static_cast<int>(std::floor(y * checker_freq));
            c = c + Rgb{1, 1, 1} * (k % 2 == 0 ? checker_amp : -checker_amp);
        }
        const double hx = (x - hair_cx) / hair_ax, hy = (y - hair_cy) / hair_ay;
        if (hx * hx + hy * hy <= 1.0 && y < hair_cut) {
            const double stripe = std::sin(2.0 * std::numbers::pi * 14.0 * x + 3.0 * y);
            c = hair + Rgb{1, 1, 1} * (hair_stripe * stripe);
        }
        return c;
    }

    double freckle_factor(double u, double v) const {
        double f = 1.0;
        for (const auto& s : freckles) {
            const double du = u - s.u, dv = v - s.v;
            if (du * du + dv * dv < s.r * s.r) f *= 1.0 - s.dark;
        }
        return f;
    }
};

Nuisance make_nuisance(const std::vector<double>& alpha, std::uint64_t noise_seed, NuisanceStyle style) {
    const bool real = style == NuisanceStyle::real_analog;
    std::mt19937_64 rng(hash_alpha(alpha, noise_seed));
    std::uniform_real_distribution<double> U(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * U(rng); };
    auto color = [&](double lo, double hi) { return Rgb{uni(lo, hi), uni(lo, hi), uni(lo, hi)}; };

    Nuisance n;
    n.base = color(0.15, 0.85);
    n.grad_x = uni(-0.2, 0.2);
    n.grad_y = uni(-0.2, 0.2);
    const int count = real ? 2 + static_cast<int>(uni(0, 3)) : 2;
    for (int i = 0; i < count; ++i) {
        const double freq = real ? uni(1.0, 9.0) : uni(1.5, 5.0);
        const double th = uni(0.0, std::numbers::pi);
        n.gratings.push_back({freq * std::cos(th), freq * std::sin(th), uni(0.0, 6.3),
                              real ? uni(0.05, 0.2) : uni(0.04, 0.12), color(-1.0, 1.0)});
    }
    if (real && U(rng) < 0.3) {
        n.checker = true;
        n.checker_freq = uni(3.0, 10.0);
        n.checker_amp = uni(0.03, 0.1);
    }
    const double hd = uni(0.05, 0.45);
    n.hair = Rgb{hd * uni(0.9, 1.3), hd * uni(0.7, 1.0), hd * uni(0.5, 0.9)};
    n.hair_cx = 0.5 + uni(-0.03, 0.03);
    n.hair_cy = 0.40 + uni(-0.03, 0.03);
    n.hair_ax = uni(0.33, 0.40);
    n.hair_ay = uni(0.30, 0.36);
    n.hair_cut = uni(0.45, 0.6);
    n.hair_stripe = uni(0.0, 0.05);
    const int spots = 5 + static_cast<int>(uni(0, 6));
    for (int i = 0; i < spots; ++i) {
        const double r = 0.85 * std::sqrt(U(rng)), th = uni(0.0, 2.0 * std::numbers::pi);
        n.freckles.push_back({r * std::cos(th), r * std::sin(th), uni(0.03, 0.05), uni(0.12, 0.25)});
    }
    return n;
}

struct Photometric {
    double gain = 1.0;
    std::array<double, 3> cast{};
    double grain = 0.0;
    bool blur = false;
    std::uint64_t grain_seed = 0;
};

Photometric make_photometric(std::uint64_t noise_seed, NuisanceStyle style) {
    const bool real = style == NuisanceStyle::real_analog;
    std::mt19937_64 rng(derive_seed(noise_seed, {0x70686f74ull}));
    std::uniform_real_distribution<double> U(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * U(rng); };
    Photometric ph;
    ph.gain = 1.0 + (real ? uni(-0.15, 0.15) : uni(-0.08, 0.08));
    for (auto& c : ph.cast) c = real ? uni(-0.06, 0.06) : uni(-0.03, 0.03);
    ph.grain = real ? uni(0.005, 0.025) : 0.012;
    ph.blur = real && U(rng) < 0.5;
    ph.grain_seed = derive_seed(noise_seed, {0x67726169ull});
    return ph;
}

} // namespace

Point2 FaceGeometry::to_image(double u, double v, bool protruding) const {
    double x = u * a, y = v * b;
    if (protruding) {
        x += depth_dx;
        y += depth_dy;
    }
    return {cx + x * cos_roll - y * sin_roll, cy + x * sin_roll + y * cos_roll};
}

Point2 FaceGeometry::to_local(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double xr = dx * cos_roll + dy * sin_roll;
    const double yr = -dx * sin_roll + dy * cos_roll;
    return {xr / a, yr / b};
}

FaceGeometry face_geometry(const FaceParams& p) {
    auto a = [&](int slot) { return attr(p.alpha, slot, kIdentitySlots); };
    const ExprAttrs e = expression_attrs(p.beta);
    FaceGeometry g;
    g.a0 = (0.27 + 0.018 * a(0)) * (1.0 + std::clamp(0.025 * e.cheek, -0.075, 0.075));
    g.b0 = 0.33 + 0.018 * a(1);
    g.a = g.a0 * std::cos(p.yaw());
    g.b = g.b0 * std::cos(p.pitch());
    g.cx = 0.5 + 0.08 * std::sin(p.yaw());
    g.cy = 0.5 + 0.08 * std::sin(p.pitch());
    g.cos_roll = std::cos(p.roll());
    g.sin_roll = std::sin(p.roll());
    g.depth_dx = 0.3 * g.a0 * std::sin(p.yaw());
    g.depth_dy = 0.3 * g.b0 * std::sin(p.pitch());
    return g;
}

ImageGrid render(const FaceParams& p, int resolution) {
    p.validate();
    const FaceLook f = make_look(p);
    ImageGrid img(resolution);
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            const double px = (x + 0.5) / resolution, py = (y + 0.5) / resolution;
            const Point2 l = f.g.to_local(px, py);
            if (!inside_face(f, l.x, l.y)) continue;
            const Rgb c = albedo(f, l.x, l.y);
            for (int ch = 0; ch < 3; ++ch)
                img.set(y, x, ch, std::clamp(c[ch] * shading(f, l.x, l.y, ch), kMinFaceLevel, 1.0));
        }
    }
    return img;
}

ImageGrid synth_photo(const FaceParams& p, std::uint64_t noise_seed, int resolution, NuisanceStyle style) {
    const ImageGrid r = render(p, resolution);
    const FaceGeometry g = face_geometry(p);
    const Nuisance nz = make_nuisance(p.alpha, noise_seed, style);
    const Photometric ph = make_photometric(noise_seed, style);
    std::mt19937_64 grain_rng(ph.grain_seed);
    std::uniform_real_distribution<double> grain(-1.0, 1.0);

    std::vector<double> buf(static_cast<std::size_t>(resolution) * resolution * 3);
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            const double px = (x + 0.5) / resolution, py = (y + 0.5) / resolution;
            const bool face = r.level(y, x, 0) | r.level(y, x, 1) | r.level(y, x, 2);
            Rgb c;
            if (face) {
                const Point2 l = g.to_local(px, py);
                const double f = nz.freckle_factor(l.x, l.y);
                c = Rgb{r.at(y, x, 0), r.at(y, x, 1), r.at(y, x, 2)} * f;
            } else {
                c = nz.background(px, py);
            }
            const double gn = ph.grain * grain(grain_rng);
            for (int ch = 0; ch < 3; ++ch)
                buf[(static_cast<std::size_t>(y) * resolution + x) * 3 + ch] = c[ch] * ph.gain * (1.0 + ph.cast[static_cast<std::size_t>(ch)]) + gn;
        }
    }
    ImageGrid out(resolution);
    auto at = [&](int y, int x, int c) {
        y = std::clamp(y, 0, resolution - 1);
        x = std::clamp(x, 0, resolution - 1);
        return buf[(static_cast<std::size_t>(y) * resolution + x) * 3 + c];
    };
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                double v = at(y, x, ch);
                if (ph.blur) {
                    // 3x3 binomial
                    v = 0.0;
                    static constexpr double k[3] = {0.25, 0.5, 0.25};
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) v += k[dy + 1] * k[dx + 1] * at(y + dy, x + dx, ch);
                }
                out.set(y, x, ch, v);
            }
        }
    }
    return out;
}

Landmarks landmark_oracle(const FaceParams& p) {
    p.validate();
    const FaceLook f = make_look(p);
    const auto& g = f.g;
    Landmarks lm;
    lm[kEyeLeft] = g.to_image(-f.eye_sep, f.eye_y);
    lm[kEyeRight] = g.to_image(f.eye_sep, f.eye_y);
    lm[kEyeLeftOuter] = g.to_image(-f.eye_sep - f.eye_w, f.eye_y);
    lm[kEyeLeftInner] = g.to_image(-f.eye_sep + f.eye_w, f.eye_y);
    lm[kEyeRightInner] = g.to_image(f.eye_sep - f.eye_w, f.eye_y);
    lm[kEyeRightOuter] = g.to_image(f.eye_sep + f.eye_w, f.eye_y);
    lm[kMouthLeft] = g.to_image(-f.mouth_w, f.mouth_y - f.curv);
    lm[kMouthRight] = g.to_image(f.mouth_w, f.mouth_y - f.curv);
    lm[kMouthCenter] = g.to_image(0.0, f.mouth_y);
    lm[kNoseTip] = g.to_image(0.0, 0.08, /*protruding=*/true);
    lm[kChin] = g.to_image(0.0, 1.0);
    lm[kForehead] = g.to_image(0.0, -0.8);
    for (auto& pt : lm) {
        pt.x = std::clamp(pt.x, 0.0, 1.0);
        pt.y = std::clamp(pt.y, 0.0, 1.0);
    }
    return lm;
}

Mask face_mask(const ImageGrid& render) {
    Mask m(static_cast<std::size_t>(render.size()) * render.size(), 0);
    const auto& px = render.levels();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = (px[3 * i] | px[3 * i + 1] | px[3 * i + 2]) != 0;
    return m;
}

// ---------------------------------------------------------------------------

std::uint64_t identity_seed(std::uint64_t build_seed, int identity_index) {
    return derive_seed(build_seed, {0x69646e74ull, static_cast<std::uint64_t>(identity_index)});
}

std::string image_name(int identity, int variant, bool photo) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "img/%06d_%02d_%s.png", identity, variant, photo ? "photo" : "render");
    return buf;
}

namespace {

void prepare_dir(const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "img", ec);
    if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());
    const auto probe = out_dir / ".write_probe";
    std::ofstream f(probe);
    if (!f) throw IoError("dataset directory is not writable: " + out_dir.string());
    f.close();
    std::filesystem::remove(probe, ec);
}

const char* kind_name(DatasetKind k) { return k == DatasetKind::synthetic ? "synthetic" : "real_analog"; }

} // namespace

DatasetManifest build_synthetic_dataset(int n_identities, int variants_per_identity, std::uint64_t seed,
                                        const std::filesystem::path& out_dir, const BuildOptions& opts) {
    if (n_identities < 1 || variants_per_identity < 1)
        throw ConfigError("build_synthetic_dataset: N and M must be >= 1");
    opts.dims.validate();
    prepare_dir(out_dir);
    DatasetManifest m;
    m.kind = DatasetKind::synthetic;
    m.dims = opts.dims;
    m.resolution = opts.resolution;
    m.build_seed = seed;
    m.root = out_dir;
    for (int i = 0; i < n_identities; ++i) {
        const std::uint64_t ids = identity_seed(seed, i);
        const FaceParams p1 = param3d::sample_params(derive_seed(ids, {1}), opts.dims);
        const std::uint64_t noise = derive_seed(ids, {2}) >> 1; // keep within int64 for JSON readers
        std::vector<FaceParams> variants{p1};
        for (auto& q : param3d::resample_nonid(p1, derive_seed(ids, {3}), variants_per_identity - 1))
            variants.push_back(std::move(q));
        for (int v = 0; v < variants_per_identity; ++v) {
            ManifestEntry e;
            e.identity_index = i;
            e.variant_index = v;
            e.params = variants[static_cast<std::size_t>(v)];
            e.noise_seed = noise;
            e.photo_path = image_name(i, v, true);
            e.render_path = image_name(i, v, false);
            write_png(out_dir / e.photo_path, synth_photo(e.params, noise, opts.resolution));
            write_png(out_dir / e.render_path, render(e.params, opts.resolution));
            m.entries.push_back(std::move(e));
        }
    }
    write_manifest(m);
    return m;
}

DatasetManifest build_real_analog_dataset(int size, std::uint64_t seed, const std::filesystem::path& out_dir,
                                          const BuildOptions& opts) {
    if (size < 1) throw ConfigError("build_real_analog_dataset: size must be >= 1");
    opts.dims.validate();
    prepare_dir(out_dir);
    DatasetManifest m;
    m.kind = DatasetKind::real_analog;
    m.dims = opts.dims;
    m.resolution = opts.resolution;
    m.build_seed = seed;
    m.root = out_dir;
    m.ground_truth_eval_only = true;
    for (int i = 0; i < size; ++i) {
        const std::uint64_t ids = derive_seed(identity_seed(seed, i), {0x7265616cull});
        ManifestEntry e;
        e.identity_index = i;
        e.variant_index = 0;
        e.params = param3d::sample_params(derive_seed(ids, {1}), opts.dims);
        e.noise_seed = derive_seed(ids, {2}) >> 1;
        e.photo_path = image_name(i, 0, true);
        write_png(out_dir / e.photo_path,
                  synth_photo(e.params, e.noise_seed, opts.resolution, NuisanceStyle::real_analog));
        m.entries.push_back(std::move(e));
    }
    write_manifest(m);
    return m;
}

nlohmann::json entry_to_json(const DatasetManifest& m, const ManifestEntry& e) {
    nlohmann::json j = {
        {"kind", kind_name(m.kind)},
        {"identity_index", e.identity_index},
        {"variant_index", e.variant_index},
        {"params", param3d::flatten(e.params)},
        {"noise_seed", e.noise_seed},
        {"photo_path", e.photo_path},
        {"render_path", e.render_path},
        {"dims", param3d::to_json(m.dims)},
        {"resolution", m.resolution},
        {"build_seed", m.build_seed},
        {"ground_truth_eval_only", m.ground_truth_eval_only},
    };
    if (e.estimated_params) j["estimated_params"] = param3d::flatten(*e.estimated_params);
    return j;
}

void write_manifest(const DatasetManifest& m) {
    std::ofstream f(m.root / kManifestFile);
    if (!f) throw IoError("cannot write manifest in " + m.root.string());
    for (const auto& e : m.entries) f << entry_to_json(m, e).dump() << '\n';
    if (!f) throw IoError("manifest write failed in " + m.root.string());
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream f(dir / kManifestFile);
    if (!f) throw IoError("cannot read manifest in " + dir.string());
    DatasetManifest m;
    m.root = dir;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        if (first) {
            m.kind = j.at("kind") == "synthetic" ? DatasetKind::synthetic : DatasetKind::real_analog;
            m.dims = param3d::dims_from_json(j.at("dims"));
            m.resolution = j.at("resolution").get<int>();
            m.build_seed = j.at("build_seed").get<std::uint64_t>();
            m.ground_truth_eval_only = j.value("ground_truth_eval_only", false);
            first = false;
        }
        ManifestEntry e;
        e.identity_index = j.at("identity_index").get<int>();
        e.variant_index = j.at("variant_index").get<int>();
        e.params = param3d::unflatten(j.at("params").get<std::vector<double>>(), m.dims);
        e.noise_seed = j.at("noise_seed").get<std::uint64_t>();
        e.photo_path = j.at("photo_path").get<std::string>();
        e.render_path = j.at("render_path").get<std::string>();
        if (j.contains("estimated_params"))
            e.estimated_params = param3d::unflatten(j.at("estimated_params").get<std::vector<double>>(), m.dims);
        m.entries.push_back(std::move(e));
    }
    if (first) throw IoError("empty manifest in " + dir.string());
    return m;
}

std::pair<DatasetManifest, DatasetManifest> split_holdout(const DatasetManifest& m, int holdout) {
    if (holdout < 0 || holdout > static_cast<int>(m.size()))
        throw ConfigError("split_holdout: holdout size out of range");
    DatasetManifest train = m, test = m;
    const auto cut = m.entries.begin() + (static_cast<std::ptrdiff_t>(m.size()) - holdout);
    train.entries.assign(m.entries.begin(), cut);
    test.entries.assign(cut, m.entries.end());
    return {train, test};
}

} // namespace fm3d::toyworld
