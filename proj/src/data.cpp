#include "pfa/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace pfa {

namespace {

constexpr double kPi = 3.14159265358979323846;

// --- NetPBM ------------------------------------------------------------------

int read_pnm_token(std::istream& in, const std::string& path) {
    // skips whitespace and '#' comments between header fields
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) {
        throw IoError(path + ": malformed NetPBM header");
    }
    long value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        if (value > 1 << 20) throw IoError(path + ": absurd header value");
        c = in.get();
    }
    if (c != EOF) in.unget();
    return static_cast<int>(value);
}

std::vector<unsigned char> read_pnm(const std::string& path, const char* magic, int channels,
                                    int& width, int& height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (!in || m0 != magic[0] || m1 != magic[1]) {
        throw IoError(path + ": expected " + magic + " magic");
    }
    width = read_pnm_token(in, path);
    height = read_pnm_token(in, path);
    const int maxval = read_pnm_token(in, path);
    if (maxval != 255) {
        throw IoError(path + ": unsupported maxval " + std::to_string(maxval) +
                      " (only 8-bit, maxval 255)");
    }
    in.get();  // single whitespace byte after maxval
    if (width <= 0 || height <= 0) {
        throw IoError(path + ": bad dimensions");
    }
    std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height * channels);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
        throw IoError(path + ": truncated pixel data");
    }
    return bytes;
}

void write_bytes(const std::string& path, const std::string& header,
                 const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("short write to " + path);
    }
}

unsigned char to_byte(float v) {
    const double c = std::min(1.0, std::max(0.0, static_cast<double>(v)));
    return static_cast<unsigned char>(std::lround(c * 255.0));
}

}  // namespace

Tensor<float> read_ppm(const std::string& path) {
    int w = 0, h = 0;
    const std::vector<unsigned char> bytes = read_pnm(path, "P6", 3, w, h);
    Tensor<float> img({3, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t px = (static_cast<std::size_t>(y) * w + x) * 3;
            for (int c = 0; c < 3; ++c) {
                img.data[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    static_cast<float>(bytes[px + static_cast<std::size_t>(c)] / 255.0);
            }
        }
    }
    return img;
}

Tensor<float> read_pgm(const std::string& path) {
    int w = 0, h = 0;
    const std::vector<unsigned char> bytes = read_pnm(path, "P5", 1, w, h);
    Tensor<float> map({1, h, w});
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        map.data[i] = static_cast<float>(bytes[i] / 255.0);
    }
    return map;
}

void write_ppm(const std::string& path, const Tensor<float>& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("write_ppm: expected [3,H,W], got " + shape_str(image.shape));
    }
    const int h = image.dim(1), w = image.dim(2);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                bytes[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)] =
                    to_byte(image.data[(static_cast<std::size_t>(c) * h + y) * w + x]);
            }
        }
    }
    write_bytes(path, "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n", bytes);
}

void write_pgm(const std::string& path, const Tensor<float>& map) {
    if (map.rank() != 3 || map.dim(0) != 1) {
        throw ShapeError("write_pgm: expected [1,H,W], got " + shape_str(map.shape));
    }
    const int h = map.dim(1), w = map.dim(2);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = to_byte(map.data[i]);
    }
    write_bytes(path, "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n", bytes);
}

Sample load_sample(const std::string& image_path, const std::string& mask_path,
                   const std::string& id) {
    Sample s;
    s.image = read_ppm(image_path);
    s.mask = read_pgm(mask_path);
    s.id = id;
    if (s.image.dim(1) != s.mask.dim(1) || s.image.dim(2) != s.mask.dim(2)) {
        throw IoError("sample dimensions differ: image " + shape_str(s.image.shape) + " vs mask " +
                      shape_str(s.mask.shape));
    }
    for (auto& v : s.mask.data) {
        v = v >= 0.5f ? 1.0f : 0.0f;
    }
    return s;
}

void save_sample(const Sample& sample, const std::string& image_path,
                 const std::string& mask_path) {
    write_ppm(image_path, sample.image);
    write_pgm(mask_path, sample.mask);
}

// --- synthetic scenes ----------------------------------------------------------

namespace {

struct ShapeMask {
    // filled candidate shape over the full canvas
    std::vector<unsigned char> on;
};

bool point_in_triangle(double px, double py, const double vx[3], const double vy[3]) {
    auto side = [&](int a, int b) {
        return (vx[b] - vx[a]) * (py - vy[a]) - (vy[b] - vy[a]) * (px - vx[a]);
    };
    const double d0 = side(0, 1), d1 = side(1, 2), d2 = side(2, 0);
    const bool has_neg = d0 < 0 || d1 < 0 || d2 < 0;
    const bool has_pos = d0 > 0 || d1 > 0 || d2 > 0;
    return !(has_neg && has_pos);
}

ShapeMask draw_shape(Rng& rng, int h, int w) {
    ShapeMask m;
    m.on.assign(static_cast<std::size_t>(h) * w, 0);
    const double scale = std::min(h, w);
    const int kind = rng.uniform_int(0, 2);
    auto fill = [&](auto&& inside) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (inside(x + 0.5, y + 0.5)) {
                    m.on[static_cast<std::size_t>(y) * w + x] = 1;
                }
            }
        }
    };
    if (kind == 0) {  // ellipse
        const double rx = rng.uniform(0.10, 0.25) * scale;
        const double ry = rng.uniform(0.10, 0.25) * scale;
        const double cx = rng.uniform(rx, w - rx);
        const double cy = rng.uniform(ry, h - ry);
        fill([&](double px, double py) {
            const double dx = (px - cx) / rx, dy = (py - cy) / ry;
            return dx * dx + dy * dy <= 1.0;
        });
    } else if (kind == 1) {  // rectangle
        const double rw = rng.uniform(0.15, 0.45) * scale;
        const double rh = rng.uniform(0.15, 0.45) * scale;
        const double x0 = rng.uniform(0.0, w - rw);
        const double y0 = rng.uniform(0.0, h - rh);
        fill([&](double px, double py) {
            return px >= x0 && px <= x0 + rw && py >= y0 && py <= y0 + rh;
        });
    } else {  // triangle, redrawn if too thin
        double vx[3], vy[3];
        for (int attempt = 0; attempt < 32; ++attempt) {
            for (int i = 0; i < 3; ++i) {
                vx[i] = rng.uniform(0.05, 0.95) * w;
                vy[i] = rng.uniform(0.05, 0.95) * h;
            }
            const double area = 0.5 * std::abs((vx[1] - vx[0]) * (vy[2] - vy[0]) -
                                               (vx[2] - vx[0]) * (vy[1] - vy[0]));
            if (area >= 0.02 * scale * scale) break;
        }
        fill([&](double px, double py) { return point_in_triangle(px, py, vx, vy); });
    }
    return m;
}

// Distance from a color to the segment of colors the background gradient
// sweeps; shapes must clear it so every object is actually salient.
double color_to_gradient_distance(const double s[3], const double c0[3], const double c1[3]) {
    double d1[3], ds[3];
    double dot11 = 0.0, dot1s = 0.0;
    for (int c = 0; c < 3; ++c) {
        d1[c] = c1[c] - c0[c];
        ds[c] = s[c] - c0[c];
        dot11 += d1[c] * d1[c];
        dot1s += d1[c] * ds[c];
    }
    const double t = dot11 == 0.0 ? 0.0 : std::min(1.0, std::max(0.0, dot1s / dot11));
    double dist2 = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double d = ds[c] - t * d1[c];
        dist2 += d * d;
    }
    return std::sqrt(dist2);
}

Sample synth_sample(std::uint64_t seed, std::uint64_t index, int h, int w) {
    Rng rng(Rng::mix(seed, index));
    Sample s;
    s.id = "sample_" + std::to_string(index);

    for (int attempt = 0; attempt < 200; ++attempt) {
        // textured background: two-color gradient plus uniform noise
        double c0[3], c1[3];
        for (int c = 0; c < 3; ++c) c0[c] = rng.uniform();
        for (int c = 0; c < 3; ++c) c1[c] = rng.uniform();
        const double theta = rng.uniform(0.0, 2.0 * kPi);
        const double gx = std::cos(theta), gy = std::sin(theta);

        s.image = Tensor<float>({3, h, w});
        s.mask = Tensor<float>({1, h, w});
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                // gradient coordinate in [0,1] along (gx,gy)
                const double t =
                    0.5 + 0.5 * ((x + 0.5) / w - 0.5) * gx + 0.5 * ((y + 0.5) / h - 0.5) * gy;
                for (int c = 0; c < 3; ++c) {
                    const double noise = rng.uniform(-0.05, 0.05);
                    const double v = c0[c] + t * (c1[c] - c0[c]) + noise;
                    s.image.data[(static_cast<std::size_t>(c) * h + y) * w + x] =
                        static_cast<float>(std::min(1.0, std::max(0.0, v)));
                }
            }
        }

        const int shapes = rng.uniform_int(1, 3);
        int placed = 0;
        for (int k = 0; k < shapes; ++k) {
            for (int retry = 0; retry < 20; ++retry) {
                ShapeMask candidate = draw_shape(rng, h, w);
                bool overlaps = false;
                for (std::size_t i = 0; i < candidate.on.size() && !overlaps; ++i) {
                    overlaps = candidate.on[i] && s.mask.data[i] != 0.0f;
                }
                if (overlaps) continue;
                // salient by construction: the fill color keeps a margin from
                // everything the background sweeps through
                double sc[3];
                for (int draw = 0; draw < 64; ++draw) {
                    for (int c = 0; c < 3; ++c) sc[c] = rng.uniform();
                    if (color_to_gradient_distance(sc, c0, c1) >= 0.25) break;
                }
                float color[3];
                for (int c = 0; c < 3; ++c) color[c] = static_cast<float>(sc[c]);
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        const std::size_t i = static_cast<std::size_t>(y) * w + x;
                        if (!candidate.on[i]) continue;
                        s.mask.data[i] = 1.0f;
                        for (int c = 0; c < 3; ++c) {
                            s.image.data[(static_cast<std::size_t>(c) * h + y) * w + x] = color[c];
                        }
                    }
                }
                ++placed;
                break;
            }
        }

        double fg = 0.0;
        for (float v : s.mask.data) fg += v;
        fg /= static_cast<double>(s.mask.numel());
        if (placed >= 1 && fg >= 0.05 && fg <= 0.5) {
            return s;
        }
    }
    throw Error("synth_dataset: could not satisfy the foreground-fraction contract for sample " +
                std::to_string(index));
}

}  // namespace

std::vector<Sample> synth_dataset(std::uint64_t seed, int count, int height, int width) {
    if (count < 1) {
        throw ConfigError("synth_dataset: count must be >= 1");
    }
    if (height % 16 != 0 || width % 16 != 0) {
        throw ConfigError("synth_dataset: size must be divisible by 16");
    }
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        out.push_back(synth_sample(seed, static_cast<std::uint64_t>(i), height, width));
    }
    return out;
}

// --- augmentation --------------------------------------------------------------

namespace {

float bilinear_at(const Tensor<float>& img, int c, double sy, double sx) {
    // clamp-to-edge sampling
    const int h = img.dim(1), w = img.dim(2);
    sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
    sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
    const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
    const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const float ty = static_cast<float>(sy - y0), tx = static_cast<float>(sx - x0);
    auto at = [&](int y, int x) {
        return img.data[(static_cast<std::size_t>(c) * h + y) * w + x];
    };
    const float top = at(y0, x0) + tx * (at(y0, x1) - at(y0, x0));
    const float bot = at(y1, x0) + tx * (at(y1, x1) - at(y1, x0));
    return top + ty * (bot - top);
}

float nearest_at_or_zero(const Tensor<float>& map, double sy, double sx) {
    const int h = map.dim(1), w = map.dim(2);
    const long y = std::lround(sy), x = std::lround(sx);
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0f;
    return map.data[(static_cast<std::size_t>(0) * h + y) * w + x];
}

}  // namespace

Sample augment(const Sample& sample, const AugmentConfig& cfg, std::uint64_t index) {
    Rng rng(Rng::mix(cfg.seed, index));
    const int h = sample.image.dim(1), w = sample.image.dim(2);

    // fixed draw order keeps streams aligned whatever the knob values are
    const double angle = rng.uniform(-cfg.rotate_max_deg, cfg.rotate_max_deg) * kPi / 180.0;
    const int ch = std::max(1, static_cast<int>(std::lround(cfg.crop_fraction * h)));
    const int cw = std::max(1, static_cast<int>(std::lround(cfg.crop_fraction * w)));
    const int cy = rng.uniform_int(0, h - ch);
    const int cx = rng.uniform_int(0, w - cw);
    const bool flip = rng.uniform() < cfg.hflip_prob;
    const float fb = static_cast<float>(1.0 + rng.uniform(-cfg.brightness, cfg.brightness));
    const float fs = static_cast<float>(1.0 + rng.uniform(-cfg.saturation, cfg.saturation));
    const float fc = static_cast<float>(1.0 + rng.uniform(-cfg.contrast, cfg.contrast));

    Sample out;
    out.id = sample.id;
    out.image = Tensor<float>({3, h, w});
    out.mask = Tensor<float>({1, h, w});

    // rotate about the image center, then crop-and-resize, composed into one
    // source coordinate per output pixel
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // crop-resize source inside the crop window
            const double ry = (y + 0.5) * ch / h - 0.5 + cy;
            const double rx = (x + 0.5) * cw / w - 0.5 + cx;
            // inverse rotation around the canvas center
            const double u = rx + 0.5 - w / 2.0, v = ry + 0.5 - h / 2.0;
            const double sx = ca * u + sa * v + w / 2.0 - 0.5;
            const double sy = -sa * u + ca * v + h / 2.0 - 0.5;
            const int ox = flip ? w - 1 - x : x;
            for (int c = 0; c < 3; ++c) {
                out.image.data[(static_cast<std::size_t>(c) * h + y) * w + ox] =
                    bilinear_at(sample.image, c, sy, sx);
            }
            out.mask.data[static_cast<std::size_t>(y) * w + ox] =
                nearest_at_or_zero(sample.mask, sy, sx);
        }
    }

    // photometric, image only; forms are exact identities at factor 1
    float luma_mean = 0.0f;
    std::vector<float> luma(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < luma.size(); ++i) {
        const float r = out.image.data[i];
        const float g = out.image.data[luma.size() + i];
        const float b = out.image.data[2 * luma.size() + i];
        luma[i] = 0.299f * r + 0.587f * g + 0.114f * b;
    }
    auto clamp01 = [](float v) { return std::min(1.0f, std::max(0.0f, v)); };
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < luma.size(); ++i) {
            float& v = out.image.data[static_cast<std::size_t>(c) * luma.size() + i];
            v = clamp01(v * fb);
            v = clamp01(luma[i] * (1.0f - fs) + fs * v);
        }
    }
    double m = 0.0;
    for (std::size_t i = 0; i < luma.size(); ++i) {
        const float r = out.image.data[i];
        const float g = out.image.data[luma.size() + i];
        const float b = out.image.data[2 * luma.size() + i];
        m += 0.299 * r + 0.587 * g + 0.114 * b;
    }
    luma_mean = static_cast<float>(m / static_cast<double>(luma.size()));
    for (auto& v : out.image.data) {
        v = clamp01(luma_mean * (1.0f - fc) + fc * v);
    }
    for (auto& v : out.mask.data) {
        v = v >= 0.5f ? 1.0f : 0.0f;
    }
    return out;
}

// --- dataset directories ---------------------------------------------------------

void save_dataset(const std::string& dir, const std::vector<Sample>& samples) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    fs::create_directories(fs::path(dir) / "masks", ec);
    if (ec) {
        throw IoError("cannot create dataset directories under " + dir);
    }
    std::ofstream manifest(fs::path(dir) / "manifest.txt", std::ios::binary);
    if (!manifest) {
        throw IoError("cannot write manifest in " + dir);
    }
    for (const Sample& s : samples) {
        save_sample(s, (fs::path(dir) / "images" / (s.id + ".ppm")).string(),
                    (fs::path(dir) / "masks" / (s.id + ".pgm")).string());
        manifest << s.id << "\n";
    }
}

std::vector<Sample> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) {
        throw IoError("missing manifest.txt in " + dir);
    }
    std::vector<Sample> out;
    std::string id;
    while (std::getline(manifest, id)) {
        if (id.empty()) continue;
        out.push_back(load_sample((fs::path(dir) / "images" / (id + ".ppm")).string(),
                                  (fs::path(dir) / "masks" / (id + ".pgm")).string(), id));
    }
    if (out.empty()) {
        throw IoError("dataset at " + dir + " is empty");
    }
    return out;
}

}  // namespace pfa
