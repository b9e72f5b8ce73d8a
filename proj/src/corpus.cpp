#include "fdm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "fdm/io.hpp"
#include "fdm/rng.hpp"

namespace fdm {

std::vector<Tensor> synthetic_blobs(int n, int size, int channels, std::uint64_t seed) {
    if (n <= 0 || size <= 0 || channels <= 0) throw std::invalid_argument("blob corpus needs positive n, size, channels");
    std::vector<Tensor> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 16)
    for (int i = 0; i < n; ++i) {
        Rng rng(seed, 5, static_cast<std::uint64_t>(i));
        Tensor img(Shape{channels, size, size});
        // Background: a faint linear gradient between two colours.
        std::vector<double> bg0(channels), bg1(channels);
        for (int c = 0; c < channels; ++c) {
            bg0[c] = -0.6 + 0.4 * rng.uniform();
            bg1[c] = -0.6 + 0.4 * rng.uniform();
        }
        const double bang = 2.0 * std::numbers::pi * rng.uniform();
        const double bx = std::cos(bang);
        const double by = std::sin(bang);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double u = 0.5 + ((x + 0.5) / size - 0.5) * bx + ((y + 0.5) / size - 0.5) * by;
                for (int c = 0; c < channels; ++c) img.at(c, y, x) = static_cast<float>(bg0[c] + (bg1[c] - bg0[c]) * u);
            }
        }
        const int blobs = 1 + static_cast<int>(rng.index(3));
        for (int b = 0; b < blobs; ++b) {
            const double cx = size * (0.15 + 0.7 * rng.uniform());
            const double cy = size * (0.15 + 0.7 * rng.uniform());
            const double sig = size * (0.08 + 0.14 * rng.uniform());
            std::vector<double> c0(channels), c1(channels);
            for (int c = 0; c < channels; ++c) {
                c0[c] = -0.2 + 1.1 * rng.uniform();
                c1[c] = -0.2 + 1.1 * rng.uniform();
            }
            const double ang = 2.0 * std::numbers::pi * rng.uniform();
            const double gx = std::cos(ang);
            const double gy = std::sin(ang);
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    const double dx = x + 0.5 - cx;
                    const double dy = y + 0.5 - cy;
                    const double a = std::exp(-(dx * dx + dy * dy) / (2.0 * sig * sig));
                    const double u = std::clamp(0.5 + (dx * gx + dy * gy) / (4.0 * sig), 0.0, 1.0);
                    for (int c = 0; c < channels; ++c) {
                        const double col = c0[c] + (c1[c] - c0[c]) * u;
                        float& v = img.at(c, y, x);
                        v = static_cast<float>(v * (1.0 - a) + col * a);
                    }
                }
            }
        }
        for (float& v : img.data) v = std::clamp(v, -1.0f, 1.0f);
        out[i] = std::move(img);
    }
    return out;
}

Tensor resize_bilinear(const Tensor& x, int height, int width) {
    Tensor out(Shape{x.shape.channels, height, width});
    const double sy = static_cast<double>(x.shape.height) / height;
    const double sx = static_cast<double>(x.shape.width) / width;
    for (int c = 0; c < x.shape.channels; ++c) {
        for (int y = 0; y < height; ++y) {
            const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, x.shape.height - 1.0);
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, x.shape.height - 1);
            const double wy = fy - y0;
            for (int xx = 0; xx < width; ++xx) {
                const double fx = std::clamp((xx + 0.5) * sx - 0.5, 0.0, x.shape.width - 1.0);
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, x.shape.width - 1);
                const double wx = fx - x0;
                const double top = x.at(c, y0, x0) * (1.0 - wx) + x.at(c, y0, x1) * wx;
                const double bot = x.at(c, y1, x0) * (1.0 - wx) + x.at(c, y1, x1) * wx;
                out.at(c, y, xx) = static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return out;
}

std::vector<Tensor> load_png_dir(const std::string& dir, int size, int channels) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::invalid_argument("corpus directory '" + dir + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Tensor> out;
    out.reserve(files.size());
    for (const auto& f : files) {
        Tensor img = read_png(f.string(), channels);
        const int side = std::min(img.shape.height, img.shape.width);
        const int oy = (img.shape.height - side) / 2;
        const int ox = (img.shape.width - side) / 2;
        Tensor crop(Shape{channels, side, side});
        for (int c = 0; c < channels; ++c) {
            for (int y = 0; y < side; ++y) {
                for (int x = 0; x < side; ++x) crop.at(c, y, x) = img.at(c, y + oy, x + ox);
            }
        }
        out.push_back(side == size ? std::move(crop) : resize_bilinear(crop, size, size));
    }
    return out;
}

std::vector<Tensor> load_corpus(const std::string& source, int size, int channels, std::uint64_t seed) {
    if (source.rfind("dir:", 0) == 0) {
        auto c = load_png_dir(source.substr(4), size, channels);
        if (c.empty()) throw std::invalid_argument("corpus directory contains no PNG files");
        return c;
    }
    std::istringstream is(source);
    std::string part;
    std::getline(is, part, ',');
    if (part != "blobs") throw std::invalid_argument("unknown corpus source '" + source + "'");
    std::map<std::string, std::string> kv;
    while (std::getline(is, part, ',')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("malformed corpus option '" + part + "'");
        kv[part.substr(0, eq)] = part.substr(eq + 1);
    }
    int n = 2048;
    for (const auto& [k, v] : kv) {
        if (k == "n") {
            n = std::stoi(v);
        } else if (k == "size") {
            if (std::stoi(v) != size) {
                throw std::invalid_argument("corpus size " + v + " differs from transform.size " + std::to_string(size));
            }
        } else {
            throw std::invalid_argument("unknown corpus option '" + k + "'");
        }
    }
    return synthetic_blobs(n, size, channels, seed);
}

std::uint64_t corpus_hash(std::span<const Tensor> corpus) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const Tensor& t : corpus) {
        const int dims[3] = {t.shape.channels, t.shape.height, t.shape.width};
        feed(dims, sizeof dims);
        feed(t.data.data(), t.data.size() * sizeof(float));
    }
    return h;
}

std::vector<double> ChannelStats::stddev() const {
    std::vector<double> s(channels);
    for (int c = 0; c < channels; ++c) s[c] = std::sqrt(std::max(0.0, cov[static_cast<std::size_t>(c) * channels + c]));
    return s;
}

ChannelStats channel_stats(std::span<const Tensor> images) {
    if (images.empty()) throw std::invalid_argument("channel_stats: no images");
    const int C = images.front().shape.channels;
    ChannelStats st;
    st.channels = C;
    st.mean.assign(C, 0.0);
    st.cov.assign(static_cast<std::size_t>(C) * C, 0.0);
    double count = 0.0;
    for (const Tensor& t : images) {
        require_shape(t, images.front().shape, "channel_stats image");
        const std::size_t plane = t.shape.plane();
        for (std::size_t i = 0; i < plane; ++i) {
            for (int a = 0; a < C; ++a) st.mean[a] += t.plane(a)[i];
        }
        count += static_cast<double>(plane);
    }
    for (double& m : st.mean) m /= count;
    for (const Tensor& t : images) {
        const std::size_t plane = t.shape.plane();
        for (std::size_t i = 0; i < plane; ++i) {
            for (int a = 0; a < C; ++a) {
                const double da = t.plane(a)[i] - st.mean[a];
                for (int b = 0; b < C; ++b) st.cov[static_cast<std::size_t>(a) * C + b] += da * (t.plane(b)[i] - st.mean[b]);
            }
        }
    }
    for (double& v : st.cov) v /= count;
    return st;
}

}  // namespace fdm
