#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "ops.hpp"

namespace deepid {

struct FaceImage {
    Tensor pixels;  // [C,H,W] in [0,1]
    int identity = 0;
    std::vector<std::uint8_t> attributes;  // 0/1 per manifest attribute, identity-constant
};

struct DatasetManifest {
    std::vector<std::string> attribute_names;
    int num_identities = 0;
    int images_per_identity = 0;
    int height = 0, width = 0, channels = 1;
    int latent_dim = 0;
    std::uint64_t seed = 0;
    std::vector<int> train_ids, val_ids, test_ids;  // identity-disjoint splits
};

struct Dataset {
    std::vector<FaceImage> images;
    DatasetManifest manifest;
};

namespace detail {

// A smooth field per latent coordinate, evaluated analytically so sub-pixel
// translation jitter is exact. Identity coordinates use sinusoid pairs;
// attribute coordinates use a Gaussian bump at a fixed random location, a
// single global appearance mode with little local texture. Fields are
// normalized to zero mean and unit RMS over the render grid so every
// coordinate is equally visible and none reduces to a plain brightness
// shift.
struct SmoothBasis {
    bool bump = false;
    double fy1 = 0, fx1 = 0, ph1 = 0, fy2 = 0, fx2 = 0, ph2 = 0;
    double cy = 0, cx = 0, sigma = 1;
    double shift = 0.0, scale = 1.0;

    double raw(double y, double x, double h, double w) const {
        if (bump) {
            const double dy = y - cy, dx = x - cx;
            return std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        }
        const double two_pi = 6.283185307179586477;
        return 0.5 * (std::sin(two_pi * (fy1 * y / h + fx1 * x / w) + ph1) +
                      std::sin(two_pi * (fy2 * y / h + fx2 * x / w) + ph2));
    }

    void normalize(int h, int w) {
        double sum = 0.0, sum2 = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = raw(y, x, h, w);
                sum += v;
                sum2 += v * v;
            }
        const double n = static_cast<double>(h) * w;
        shift = sum / n;
        const double var = sum2 / n - shift * shift;
        scale = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    }

    double eval(double y, double x, double h, double w) const {
        return (raw(y, x, h, w) - shift) * scale;
    }
};

} // namespace detail

// Synthetic identity/attribute corpus. Each identity is a latent vector;
// attributes are thresholded linear readouts of the latent (rebalanced so
// positives stay between 20% and 80% of identities); each image renders the
// latent through fixed random smooth fields with per-image translation,
// brightness, and pixel-noise jitter. Splits are identity-disjoint.
inline Dataset gen_dataset(int num_ids, int imgs_per_id, int num_attrs, int height, int width, std::uint64_t seed,
                           int train_ids = -1, int val_ids = -1, int latent_dim = 6) {
    if (num_ids < 4) throw argument_error("gen_dataset: need at least 4 identities");
    if (imgs_per_id < 2) throw argument_error("gen_dataset: need at least 2 images per identity");
    if (num_attrs < 0) throw argument_error("gen_dataset: num_attrs must be >= 0");
    if (latent_dim < 1) throw argument_error("gen_dataset: latent_dim must be >= 1");
    if (height < 12 || width < 12)
        throw config_error("gen_dataset: image " + std::to_string(height) + "x" + std::to_string(width) +
                           " is too small for the +/-2 pixel jitter margins");
    if (train_ids < 0) train_ids = num_ids * 5 / 8;
    if (val_ids < 0) val_ids = std::max(1, (num_ids - train_ids) * 5 / 12);
    if (train_ids < 2 || val_ids < 1 || train_ids + val_ids >= num_ids)
        throw config_error("gen_dataset: split " + std::to_string(train_ids) + "/" + std::to_string(val_ids) +
                           "/rest does not fit " + std::to_string(num_ids) + " identities");

    if (num_attrs > latent_dim)
        throw config_error("gen_dataset: num_attrs (" + std::to_string(num_attrs) +
                           ") cannot exceed latent_dim (" + std::to_string(latent_dim) + ")");

    RngState master(seed);
    RngState basis_rng = master.fork(1);
    RngState latent_rng = master.fork(2);
    RngState attr_rng = master.fork(3);

    // Latent coordinates 0..num_attrs-1 carry the attributes as bimodal
    // bright/dark Gaussian bumps at fixed random positions; the remaining
    // coordinates are standard-normal identity factors on mid-frequency
    // sinusoid fields.
    std::vector<detail::SmoothBasis> basis(latent_dim);
    for (int k = 0; k < latent_dim; ++k) {
        if (k < num_attrs) {
            // bump centers cycle through the four quadrants so attribute
            // regions do not collide
            basis[k].bump = true;
            const double qy = (k % 4 < 2) ? 0.32 : 0.68;
            const double qx = (k % 2 == 0) ? 0.32 : 0.68;
            basis[k].cy = (qy + basis_rng.uniform(-0.06, 0.06)) * height;
            basis[k].cx = (qx + basis_rng.uniform(-0.06, 0.06)) * width;
            basis[k].sigma = basis_rng.uniform(0.24, 0.32) * std::min(height, width);
        } else {
            basis[k].fy1 = basis_rng.uniform(0.8, 2.4);
            basis[k].fx1 = basis_rng.uniform(0.8, 2.4);
            basis[k].ph1 = basis_rng.uniform(0.0, 6.283185307179586477);
            basis[k].fy2 = basis_rng.uniform(0.8, 2.4);
            basis[k].fx2 = basis_rng.uniform(0.8, 2.4);
            basis[k].ph2 = basis_rng.uniform(0.0, 6.283185307179586477);
        }
        basis[k].normalize(height, width);
    }

    std::vector<std::vector<double>> latents(num_ids, std::vector<double>(latent_dim));
    for (auto& z : latents)
        for (double& v : z) v = latent_rng.normal();
    for (int a = 0; a < num_attrs; ++a) {
        // bimodal attribute coordinate, balanced by an exact positive count
        const double rate = attr_rng.uniform(0.35, 0.65);
        const int kmin = static_cast<int>(std::ceil(0.25 * num_ids));
        const int kmax = static_cast<int>(std::floor(0.75 * num_ids));
        const int k = std::clamp(static_cast<int>(std::llround(rate * num_ids)), std::max(1, kmin),
                                 std::min(num_ids - 1, kmax));
        std::vector<int> order(num_ids);
        std::iota(order.begin(), order.end(), 0);
        attr_rng.shuffle(order.begin(), order.end());
        for (int i = 0; i < num_ids; ++i) {
            const double sign = i < k ? 1.0 : -1.0;
            latents[order[i]][a] = sign * (2.2 + 0.3 * std::abs(attr_rng.normal()));
        }
    }

    Dataset ds;
    ds.manifest.num_identities = num_ids;
    ds.manifest.images_per_identity = imgs_per_id;
    ds.manifest.height = height;
    ds.manifest.width = width;
    ds.manifest.channels = 1;
    ds.manifest.latent_dim = latent_dim;
    ds.manifest.seed = seed;
    for (int a = 0; a < num_attrs; ++a) {
        char name[16];
        std::snprintf(name, sizeof(name), "attr%02d", a);
        ds.manifest.attribute_names.push_back(name);
    }
    for (int i = 0; i < num_ids; ++i) {
        if (i < train_ids)
            ds.manifest.train_ids.push_back(i);
        else if (i < train_ids + val_ids)
            ds.manifest.val_ids.push_back(i);
        else
            ds.manifest.test_ids.push_back(i);
    }

    // attribute bits: thresholded readout of the dedicated latent coordinate
    std::vector<std::vector<std::uint8_t>> attr_bits(num_ids, std::vector<std::uint8_t>(num_attrs, 0));
    for (int a = 0; a < num_attrs; ++a)
        for (int i = 0; i < num_ids; ++i) attr_bits[i][a] = latents[i][a] > 0.0 ? 1 : 0;

    ds.images.reserve(static_cast<std::size_t>(num_ids) * imgs_per_id);
    for (int id = 0; id < num_ids; ++id) {
        for (int j = 0; j < imgs_per_id; ++j) {
            RngState jitter = master.fork(16 + static_cast<std::uint64_t>(id) * imgs_per_id + j);
            const double dy = jitter.uniform(-2.0, 2.0);
            const double dx = jitter.uniform(-2.0, 2.0);
            const double brightness = jitter.uniform(-0.08, 0.08);
            FaceImage img;
            img.identity = id;
            img.attributes = attr_bits[id];
            img.pixels = Tensor({1, static_cast<std::size_t>(height), static_cast<std::size_t>(width)});
            const double gain = 1.4 / std::sqrt(static_cast<double>(latent_dim));
            for (int y = 0; y < height; ++y) {
                for (int x = 0; x < width; ++x) {
                    double pre = 0.0;
                    for (int k = 0; k < latent_dim; ++k)
                        pre += latents[id][k] * basis[k].eval(y + dy, x + dx, height, width);
                    double v = 1.0 / (1.0 + std::exp(-gain * pre));
                    v += brightness + 0.02 * jitter.normal();
                    img.pixels[static_cast<std::size_t>(y) * width + x] =
                        static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
            ds.images.push_back(std::move(img));
        }
    }
    return ds;
}

// ------------------------------------------------------------------ occluders

// Bottom ceil(fraction*H) rows set to fill; occlusion grows upward.
inline Tensor occlude_partial(const Tensor& pixels, double fraction, float fill) {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw argument_error("occlude_partial: fraction must be in [0,1]");
    if (pixels.rank() != 3)
        throw shape_error("occlude_partial: image must be [C,H,W], got " + shape_str(pixels.shape()));
    const std::size_t c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
    // small negative slack so fraction*H just below an integer does not spill over
    const std::size_t rows = static_cast<std::size_t>(
        std::clamp<double>(std::ceil(fraction * static_cast<double>(h) - 1e-9), 0.0, static_cast<double>(h)));
    Tensor out = pixels;
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = h - rows; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out(ci, y, x) = fill;
    return out;
}

inline FaceImage occlude_partial(const FaceImage& img, double fraction, float fill) {
    FaceImage out = img;
    out.pixels = occlude_partial(img.pixels, fraction, fill);
    return out;
}

// One n x n block at a uniformly random valid position (row offset drawn
// first, then column offset).
inline Tensor occlude_block(const Tensor& pixels, int n, float fill, RngState& rng) {
    if (pixels.rank() != 3)
        throw shape_error("occlude_block: image must be [C,H,W], got " + shape_str(pixels.shape()));
    const std::size_t c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
    if (n < 0 || static_cast<std::size_t>(n) > std::min(h, w))
        throw argument_error("occlude_block: block size " + std::to_string(n) + " exceeds image " +
                             std::to_string(h) + "x" + std::to_string(w));
    Tensor out = pixels;
    if (n == 0) return out;
    const std::size_t y0 = rng.index(h - n + 1);
    const std::size_t x0 = rng.index(w - n + 1);
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = y0; y < y0 + n; ++y)
            for (std::size_t x = x0; x < x0 + n; ++x) out(ci, y, x) = fill;
    return out;
}

inline FaceImage occlude_block(const FaceImage& img, int n, float fill, RngState& rng) {
    FaceImage out = img;
    out.pixels = occlude_block(img.pixels, n, fill, rng);
    return out;
}

inline FaceImage hflip(const FaceImage& img) {
    FaceImage out = img;
    out.pixels = hflip_chw(img.pixels);
    return out;
}

// ------------------------------------------------------------------- disk I/O

namespace detail {

inline std::string id_dir_name(int id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "id_%05d", id);
    return buf;
}

inline void write_pgm(const std::filesystem::path& path, const Tensor& pixels) {
    if (pixels.rank() != 3 || pixels.dim(0) != 1)
        throw io_error("write_pgm: PGM holds single-channel images, got " + shape_str(pixels.shape()));
    const std::size_t h = pixels.dim(1), w = pixels.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("write_pgm: cannot open " + path.string());
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const long q = std::lround(static_cast<double>(pixels(0, y, x)) * 255.0);
            row[x] = static_cast<unsigned char>(std::clamp(q, 0L, 255L));
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(w));
    }
    if (!out) throw io_error("write_pgm: failed writing " + path.string());
}

inline Tensor read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("read_pgm: cannot open " + path.string());
    auto next_token = [&]() -> std::string {
        std::string tok;
        int ch;
        while ((ch = in.get()) != EOF) {
            if (ch == '#') {  // comment to end of line
                while ((ch = in.get()) != EOF && ch != '\n') {
                }
                continue;
            }
            if (std::isspace(ch)) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(static_cast<char>(ch));
        }
        return tok;
    };
    if (next_token() != "P5") throw io_error("read_pgm: " + path.string() + " is not a binary PGM (P5)");
    const std::string ws = next_token(), hs = next_token(), ms = next_token();
    std::size_t w = 0, h = 0;
    int maxval = 0;
    try {
        w = static_cast<std::size_t>(std::stoul(ws));
        h = static_cast<std::size_t>(std::stoul(hs));
        maxval = std::stoi(ms);
    } catch (const std::exception&) {
        throw io_error("read_pgm: malformed header in " + path.string());
    }
    if (w == 0 || h == 0 || maxval != 255)
        throw io_error("read_pgm: unsupported header in " + path.string() + " (need maxval 255)");
    std::vector<unsigned char> raster(w * h);
    in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    if (static_cast<std::size_t>(in.gcount()) != raster.size())
        throw io_error("read_pgm: truncated raster in " + path.string());
    Tensor t({1, h, w});
    for (std::size_t i = 0; i < raster.size(); ++i) t[i] = static_cast<float>(raster[i]) / 255.0f;
    return t;
}

inline std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

inline std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    return out;
}

} // namespace detail

// Layout: <dir>/<identity>/<image>.pgm plus attributes.csv and manifest.txt.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::map<int, int> counter;
    for (const FaceImage& img : ds.images) {
        const std::filesystem::path id_dir = dir / detail::id_dir_name(img.identity);
        std::filesystem::create_directories(id_dir);
        char name[24];
        std::snprintf(name, sizeof(name), "img_%04d.pgm", counter[img.identity]++);
        detail::write_pgm(id_dir / name, img.pixels);
    }

    {
        CsvWriter csv(dir / "attributes.csv");
        std::vector<std::string> header{"identity"};
        for (const std::string& n : ds.manifest.attribute_names) header.push_back(n);
        csv.row(header);
        std::map<int, const FaceImage*> first_of;
        for (const FaceImage& img : ds.images)
            if (!first_of.count(img.identity)) first_of[img.identity] = &img;
        for (const auto& [id, img] : first_of) {
            std::vector<std::string> row{std::to_string(id)};
            for (std::uint8_t b : img->attributes) row.push_back(b ? "1" : "0");
            csv.row(row);
        }
    }

    std::ofstream mf(dir / "manifest.txt", std::ios::binary);
    if (!mf) throw io_error("write_dataset: cannot open manifest.txt");
    mf << "num_identities=" << ds.manifest.num_identities << "\n";
    mf << "images_per_identity=" << ds.manifest.images_per_identity << "\n";
    mf << "height=" << ds.manifest.height << "\n";
    mf << "width=" << ds.manifest.width << "\n";
    mf << "channels=" << ds.manifest.channels << "\n";
    mf << "latent_dim=" << ds.manifest.latent_dim << "\n";
    mf << "seed=" << ds.manifest.seed << "\n";
    std::string names;
    for (std::size_t i = 0; i < ds.manifest.attribute_names.size(); ++i) {
        if (i) names += ";";
        names += ds.manifest.attribute_names[i];
    }
    mf << "attribute_names=" << names << "\n";
    mf << "train_ids=" << detail::join_ints(ds.manifest.train_ids) << "\n";
    mf << "val_ids=" << detail::join_ints(ds.manifest.val_ids) << "\n";
    mf << "test_ids=" << detail::join_ints(ds.manifest.test_ids) << "\n";
}

// Identities are indexed by folder order, sorted lexicographically. A missing
// attributes.csv yields empty attribute bitsets; a missing manifest.txt puts
// every identity in the train split.
inline Dataset load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw io_error("load_dataset: " + dir.string() + " is not a directory");
    std::vector<std::filesystem::path> id_dirs;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_directory()) id_dirs.push_back(e.path());
    std::sort(id_dirs.begin(), id_dirs.end());
    if (id_dirs.empty()) throw io_error("load_dataset: no identity folders under " + dir.string());

    Dataset ds;
    Shape expect;
    for (std::size_t id = 0; id < id_dirs.size(); ++id) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(id_dirs[id]))
            if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            FaceImage img;
            img.identity = static_cast<int>(id);
            img.pixels = detail::read_pgm(f);
            if (expect.empty())
                expect = img.pixels.shape();
            else if (img.pixels.shape() != expect)
                throw io_error("load_dataset: " + f.string() + " has size " + shape_str(img.pixels.shape()) +
                               ", expected " + shape_str(expect));
            ds.images.push_back(std::move(img));
        }
    }
    if (ds.images.empty()) throw io_error("load_dataset: no .pgm images under " + dir.string());

    ds.manifest.num_identities = static_cast<int>(id_dirs.size());
    ds.manifest.channels = static_cast<int>(expect[0]);
    ds.manifest.height = static_cast<int>(expect[1]);
    ds.manifest.width = static_cast<int>(expect[2]);

    const std::filesystem::path attr_path = dir / "attributes.csv";
    if (std::filesystem::exists(attr_path)) {
        std::ifstream in(attr_path, std::ios::binary);
        if (!in) throw io_error("load_dataset: cannot open " + attr_path.string());
        std::string line;
        if (!std::getline(in, line)) throw io_error("load_dataset: empty " + attr_path.string());
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::stringstream hs(line);
        std::string tok;
        bool first = true;
        while (std::getline(hs, tok, ',')) {
            if (first) {
                first = false;
                continue;  // "identity" column
            }
            ds.manifest.attribute_names.push_back(tok);
        }
        std::map<int, std::vector<std::uint8_t>> bits;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            std::stringstream ls(line);
            std::string cell;
            std::vector<std::string> cells;
            while (std::getline(ls, cell, ',')) cells.push_back(cell);
            if (cells.empty()) continue;
            try {
                const int id = std::stoi(cells[0]);
                std::vector<std::uint8_t> row;
                for (std::size_t i = 1; i < cells.size(); ++i)
                    row.push_back(static_cast<std::uint8_t>(std::stoi(cells[i]) != 0));
                bits[id] = std::move(row);
            } catch (const std::exception&) {
                throw io_error("load_dataset: malformed row in " + attr_path.string() + ": " + line);
            }
        }
        for (FaceImage& img : ds.images) {
            auto it = bits.find(img.identity);
            img.attributes = it == bits.end()
                                 ? std::vector<std::uint8_t>(ds.manifest.attribute_names.size(), 0)
                                 : it->second;
        }
    } else {
        for (FaceImage& img : ds.images) img.attributes.clear();
    }

    const std::filesystem::path mf_path = dir / "manifest.txt";
    if (std::filesystem::exists(mf_path)) {
        std::ifstream in(mf_path, std::ios::binary);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            try {
                if (key == "images_per_identity") ds.manifest.images_per_identity = std::stoi(val);
                else if (key == "latent_dim") ds.manifest.latent_dim = std::stoi(val);
                else if (key == "seed") ds.manifest.seed = std::stoull(val);
                else if (key == "train_ids") ds.manifest.train_ids = detail::split_ints(val);
                else if (key == "val_ids") ds.manifest.val_ids = detail::split_ints(val);
                else if (key == "test_ids") ds.manifest.test_ids = detail::split_ints(val);
                // num_identities/height/width/channels/attribute_names come from the files themselves
            } catch (const std::exception&) {
                throw io_error("load_dataset: malformed manifest line: " + line);
            }
        }
    }
    if (ds.manifest.train_ids.empty() && ds.manifest.val_ids.empty() && ds.manifest.test_ids.empty())
        for (int i = 0; i < ds.manifest.num_identities; ++i) ds.manifest.train_ids.push_back(i);
    return ds;
}

} // namespace deepid
