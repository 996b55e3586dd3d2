#ifndef GTN_DATASET_HPP
#define GTN_DATASET_HPP

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gtn/errors.hpp"

namespace gtn {

// Labelled samples over a fixed geometry. Inputs are either scalars in [0,1]
// per site (vec_dim == 1, a feature map is applied downstream) or precomputed
// feature vectors per site (vec_dim == d, used directly).
class Dataset {
  public:
    int height = 1;
    int width = 0;
    int vec_dim = 1;
    int num_classes = 0;

    long num_sites() const { return static_cast<long>(height) * width; }
    long sample_values() const { return num_sites() * vec_dim; }
    long size() const { return static_cast<long>(labels_.size()); }
    bool empty() const { return labels_.empty(); }

    const double *input(long i) const {
        return values_.data() + i * sample_values();
    }
    int label(long i) const { return labels_[i]; }

    void add_sample(const std::vector<double> &values, int label) {
        if (static_cast<long>(values.size()) != sample_values())
            throw InvalidArgumentError("add_sample: expected " +
                                       std::to_string(sample_values()) +
                                       " values, got " +
                                       std::to_string(values.size()));
        values_.insert(values_.end(), values.begin(), values.end());
        labels_.push_back(label);
        num_classes = std::max(num_classes, label + 1);
    }

    Dataset select(const std::vector<long> &indices) const {
        Dataset out = geometry_like();
        out.num_classes = num_classes;
        for (long i : indices) {
            out.values_.insert(out.values_.end(), input(i),
                               input(i) + sample_values());
            out.labels_.push_back(labels_[i]);
        }
        return out;
    }

    Dataset geometry_like() const {
        Dataset out;
        out.height = height;
        out.width = width;
        out.vec_dim = vec_dim;
        out.num_classes = num_classes;
        return out;
    }

  private:
    std::vector<double> values_;
    std::vector<int> labels_;
};

namespace idx {

inline std::uint32_t read_be32(std::istream &in, const char *what,
                               long offset) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char *>(b), 4))
        throw ParseError(std::string("idx: truncated ") + what +
                         " at byte offset " + std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline constexpr std::uint32_t kImagesMagic = 0x00000803;
inline constexpr std::uint32_t kLabelsMagic = 0x00000801;

} // namespace idx

// Parse an IDX image/label file pair (the MNIST container format): big-endian
// magic, dimension counts, then raw bytes. Pixels are divided by 255.
inline Dataset load_idx(const std::string &images_path,
                        const std::string &labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs)
        throw ParseError("idx: cannot open " + images_path);
    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs)
        throw ParseError("idx: cannot open " + labels_path);

    const std::uint32_t magic_i = idx::read_be32(imgs, "image magic", 0);
    if (magic_i != idx::kImagesMagic) {
        std::ostringstream os;
        os << "idx: bad image magic 0x" << std::hex << magic_i << " at byte "
           << "offset 0 in " << images_path;
        throw ParseError(os.str());
    }
    const std::uint32_t n_img = idx::read_be32(imgs, "image count", 4);
    const std::uint32_t h = idx::read_be32(imgs, "image rows", 8);
    const std::uint32_t w = idx::read_be32(imgs, "image cols", 12);

    const std::uint32_t magic_l = idx::read_be32(labs, "label magic", 0);
    if (magic_l != idx::kLabelsMagic) {
        std::ostringstream os;
        os << "idx: bad label magic 0x" << std::hex << magic_l << " at byte "
           << "offset 0 in " << labels_path;
        throw ParseError(os.str());
    }
    const std::uint32_t n_lab = idx::read_be32(labs, "label count", 4);
    if (n_img != n_lab)
        throw ParseError("idx: image count " + std::to_string(n_img) +
                         " != label count " + std::to_string(n_lab));

    Dataset ds;
    ds.height = static_cast<int>(h);
    ds.width = static_cast<int>(w);
    ds.vec_dim = 1;

    const long npix = static_cast<long>(h) * w;
    std::vector<unsigned char> pix(npix);
    std::vector<double> vals(npix);
    for (std::uint32_t i = 0; i < n_img; ++i) {
        if (!imgs.read(reinterpret_cast<char *>(pix.data()), npix))
            throw ParseError("idx: truncated image data at byte offset " +
                             std::to_string(16 + static_cast<long>(i) * npix) +
                             " in " + images_path);
        char lab;
        if (!labs.read(&lab, 1))
            throw ParseError("idx: truncated label data at byte offset " +
                             std::to_string(8 + i) + " in " + labels_path);
        for (long p = 0; p < npix; ++p)
            vals[p] = pix[p] / 255.0;
        ds.add_sample(vals, static_cast<unsigned char>(lab));
    }
    return ds;
}

// Inverse of load_idx for tests and generators. Values are rounded back to
// bytes, which is exact for data that came from load_idx.
inline void write_idx(const Dataset &ds, const std::string &images_path,
                      const std::string &labels_path) {
    if (ds.vec_dim != 1)
        throw InvalidArgumentError("write_idx: dataset has vector inputs");
    auto be32 = [](std::ostream &o, std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
        o.write(reinterpret_cast<char *>(b), 4);
    };
    std::ofstream imgs(images_path, std::ios::binary);
    std::ofstream labs(labels_path, std::ios::binary);
    be32(imgs, idx::kImagesMagic);
    be32(imgs, static_cast<std::uint32_t>(ds.size()));
    be32(imgs, static_cast<std::uint32_t>(ds.height));
    be32(imgs, static_cast<std::uint32_t>(ds.width));
    be32(labs, idx::kLabelsMagic);
    be32(labs, static_cast<std::uint32_t>(ds.size()));
    const long npix = ds.num_sites();
    std::vector<unsigned char> pix(npix);
    for (long i = 0; i < ds.size(); ++i) {
        const double *v = ds.input(i);
        for (long p = 0; p < npix; ++p)
            pix[p] = static_cast<unsigned char>(std::lround(v[p] * 255.0));
        imgs.write(reinterpret_cast<char *>(pix.data()), npix);
        char lab = static_cast<char>(ds.label(i));
        labs.write(&lab, 1);
    }
}

// Deterministic shuffled split into disjoint (train, val) of exact sizes.
inline std::pair<Dataset, Dataset> split(const Dataset &ds, long n_train,
                                         long n_val, std::uint64_t seed) {
    if (n_train < 0 || n_val < 0 || n_train + n_val > ds.size())
        throw InvalidArgumentError(
            "split: requested " + std::to_string(n_train) + "+" +
            std::to_string(n_val) + " from " + std::to_string(ds.size()) +
            " samples");
    std::vector<long> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<long> tr(idx.begin(), idx.begin() + n_train);
    std::vector<long> va(idx.begin() + n_train, idx.begin() + n_train + n_val);
    return {ds.select(tr), ds.select(va)};
}

// Sequence CSV: header "N=<n>,d=<d>,min=<m0;m1;...>,max=<M0;M1;...>", then one
// row per sample: label, then N*d values. Features are min-max normalized per
// dimension with the header-declared ranges.
inline Dataset load_sequence_csv(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("csv: cannot open " + path);
    std::string header;
    if (!std::getline(in, header))
        throw ParseError("csv: empty file " + path);

    long n = -1, d = -1;
    std::vector<double> mins, maxs;
    {
        std::istringstream hs(header);
        std::string field;
        auto parse_list = [](const std::string &s) {
            std::vector<double> out;
            std::istringstream ls(s);
            std::string item;
            while (std::getline(ls, item, ';'))
                out.push_back(std::stod(item));
            return out;
        };
        while (std::getline(hs, field, ',')) {
            try {
                if (field.rfind("N=", 0) == 0)
                    n = std::stol(field.substr(2));
                else if (field.rfind("d=", 0) == 0)
                    d = std::stol(field.substr(2));
                else if (field.rfind("min=", 0) == 0)
                    mins = parse_list(field.substr(4));
                else if (field.rfind("max=", 0) == 0)
                    maxs = parse_list(field.substr(4));
                else
                    throw ParseError("csv: unknown header field '" + field +
                                     "'");
            } catch (const ParseError &) {
                throw;
            } catch (const std::exception &) {
                throw ParseError("csv: bad header field '" + field + "'");
            }
        }
    }
    if (n < 1 || d < 1)
        throw ParseError("csv: header must declare N and d");
    if (static_cast<long>(mins.size()) != d ||
        static_cast<long>(maxs.size()) != d)
        throw ParseError("csv: min/max lists must have d entries");
    for (long f = 0; f < d; ++f)
        if (!(maxs[f] > mins[f]))
            throw ParseError("csv: max must exceed min for feature " +
                             std::to_string(f));

    Dataset ds;
    ds.height = 1;
    ds.width = static_cast<int>(n);
    ds.vec_dim = static_cast<int>(d);

    std::string line;
    long row = 1;
    std::vector<double> vals;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty())
            continue;
        std::istringstream ls(line);
        std::string item;
        vals.clear();
        while (std::getline(ls, item, ','))
            try {
                vals.push_back(std::stod(item));
            } catch (const std::exception &) {
                throw ParseError("csv: bad value '" + item + "' in row " +
                                 std::to_string(row));
            }
        if (static_cast<long>(vals.size()) != 1 + n * d)
            throw ParseError("csv: row " + std::to_string(row) + " has " +
                             std::to_string(vals.size()) + " fields, want " +
                             std::to_string(1 + n * d));
        const int label = static_cast<int>(vals[0]);
        std::vector<double> sample(n * d);
        for (long j = 0; j < n; ++j)
            for (long f = 0; f < d; ++f) {
                const double raw = vals[1 + j * d + f];
                sample[j * d + f] = (raw - mins[f]) / (maxs[f] - mins[f]);
            }
        ds.add_sample(sample, label);
    }
    return ds;
}

inline void write_sequence_csv(const Dataset &ds, const std::vector<double> &mins,
                               const std::vector<double> &maxs,
                               std::ostream &out) {
    out.precision(17);
    out << "N=" << ds.num_sites() << ",d=" << ds.vec_dim << ",min=";
    for (size_t f = 0; f < mins.size(); ++f)
        out << (f ? ";" : "") << mins[f];
    out << ",max=";
    for (size_t f = 0; f < maxs.size(); ++f)
        out << (f ? ";" : "") << maxs[f];
    out << "\n";
    for (long i = 0; i < ds.size(); ++i) {
        out << ds.label(i);
        const double *v = ds.input(i);
        for (long j = 0; j < ds.sample_values(); ++j) {
            const long f = j % ds.vec_dim;
            out << "," << (mins[f] + v[j] * (maxs[f] - mins[f]));
        }
        out << "\n";
    }
}

// Two uniform variables in [0,1]; label = 1{x1 > 1/2} xor 1{x2 > 1/2}. A
// stress set a linear model cannot separate.
inline Dataset make_xor_features(long n, std::uint64_t seed) {
    if (n < 4)
        throw InvalidArgumentError("make_xor_features: need n >= 4");
    Dataset ds;
    ds.height = 1;
    ds.width = 2;
    ds.vec_dim = 1;
    ds.num_classes = 2;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (long i = 0; i < n; ++i) {
        const double x1 = u(rng), x2 = u(rng);
        const int label = (x1 > 0.5) != (x2 > 0.5) ? 1 : 0;
        ds.add_sample({x1, x2}, label);
    }
    return ds;
}

} // namespace gtn

#endif // GTN_DATASET_HPP
