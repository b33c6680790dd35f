#include "mapn/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mapn/error.hpp"
#include "mapn/random.hpp"

namespace mapn {

static_assert(std::endian::native == std::endian::little, "slice files are written in host byte order");

const char* to_string(Regime r)
{
    switch (r) {
    case Regime::oaon: return "oaon";
    case Regime::maon: return "maon";
    case Regime::mapn: return "mapn";
    }
    return "?";
}

Regime regime_from_string(std::string_view s)
{
    if (s == "oaon") return Regime::oaon;
    if (s == "maon") return Regime::maon;
    if (s == "mapn") return Regime::mapn;
    throw ConfigError("unknown regime '" + std::string(s) + "' (expected oaon, maon or mapn)");
}

const char* to_string(Split s) { return s == Split::train ? "train" : "val"; }

AnatomyProfile knee_profile()
{
    AnatomyProfile p;
    p.label = "knee";
    p.body_intensity = 0.45;
    p.body_rx = 0.85;
    p.body_ry = 0.6;
    p.structures = 5;
    p.structure_mean = 0.8;
    p.structure_std = 0.15;
    p.structure_radius_min = 0.1;
    p.structure_radius_max = 0.3;
    p.eccentricity_max = 0.6;
    p.spread = 0.6;
    p.texture_frequency = 8.0;
    p.texture_amplitude = 0.15;
    return p;
}

AnatomyProfile brain_profile()
{
    AnatomyProfile p;
    p.label = "brain";
    p.body_intensity = 0.3;
    p.body_rx = 0.7;
    p.body_ry = 0.82;
    p.structures = 10;
    p.structure_mean = 0.45;
    p.structure_std = 0.08;
    p.structure_radius_min = 0.05;
    p.structure_radius_max = 0.15;
    p.eccentricity_max = 0.3;
    p.spread = 0.7;
    p.texture_frequency = 3.0;
    p.texture_amplitude = 0.05;
    p.rim_intensity = 0.9;
    return p;
}

AnatomyProfile cardiac_profile()
{
    AnatomyProfile p;
    p.label = "cardiac";
    p.body_intensity = 0.2;
    p.body_rx = 0.9;
    p.body_ry = 0.55;
    p.structures = 3;
    p.structure_mean = 1.0;
    p.structure_std = 0.2;
    p.structure_radius_min = 0.1;
    p.structure_radius_max = 0.18;
    p.eccentricity_max = 0.2;
    p.spread = 0.3;
    p.texture_frequency = 12.0;
    p.texture_amplitude = 0.05;
    return p;
}

AnatomyProfile default_profile(std::string_view label)
{
    if (label == "knee") return knee_profile();
    if (label == "brain") return brain_profile();
    if (label == "cardiac") return cardiac_profile();
    throw ConfigError("no default phantom profile for anatomy '" + std::string(label) +
                      "' (known: knee, brain, cardiac)");
}

namespace {

// Marsaglia-Tsang, shape >= 1 assumed by the profiles but boosted otherwise.
double sample_gamma(double shape, double scale, Rng& rng)
{
    if (shape < 1.0) {
        const double u = rng.uniform();
        return sample_gamma(shape + 1.0, scale, rng) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = 0.0, v = 0.0;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
}

struct Ellipse {
    double cx, cy, rx, ry, angle;

    // Normalised radial coordinate: < 1 inside.
    double radius(double u, double v) const
    {
        const double du = u - cx, dv = v - cy;
        const double c = std::cos(angle), s = std::sin(angle);
        const double a = (c * du + s * dv) / rx;
        const double b = (-s * du + c * dv) / ry;
        return std::sqrt(a * a + b * b);
    }
};

double edge_weight(double radius, double softness)
{
    return std::clamp((1.0 - radius) / softness, 0.0, 1.0);
}

GrayImage draw_phantom(const AnatomyProfile& p, std::int64_t h, std::int64_t w, Rng& rng)
{
    constexpr double kTwoPi = 2.0 * std::numbers::pi;
    const Ellipse body{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), p.body_rx * rng.uniform(0.9, 1.1),
                       p.body_ry * rng.uniform(0.9, 1.1), rng.uniform(-0.2, 0.2)};
    const double tex_dir = rng.uniform(0.0, kTwoPi);
    const double tex_phase = rng.uniform(0.0, kTwoPi);

    std::vector<Ellipse> parts;
    std::vector<double> levels;
    const double gamma_shape = (p.structure_mean / p.structure_std) * (p.structure_mean / p.structure_std);
    const double gamma_scale = p.structure_std * p.structure_std / p.structure_mean;
    for (int k = 0; k < p.structures; ++k) {
        const double r = rng.uniform(p.structure_radius_min, p.structure_radius_max);
        const double t = rng.uniform(0.0, kTwoPi);
        const double d = p.spread * std::sqrt(rng.uniform());
        const double ecc = rng.uniform(0.0, p.eccentricity_max);
        parts.push_back({body.cx + d * body.rx * std::cos(t), body.cy + d * body.ry * std::sin(t), r, r * (1.0 - ecc),
                         rng.uniform(0.0, kTwoPi)});
        levels.push_back(sample_gamma(gamma_shape, gamma_scale, rng));
    }

    GrayImage img{h, w, std::vector<double>(static_cast<std::size_t>(h * w))};
    for (std::int64_t r = 0; r < h; ++r) {
        const double v = (static_cast<double>(r) + 0.5) / static_cast<double>(h) * 2.0 - 1.0;
        for (std::int64_t c = 0; c < w; ++c) {
            const double u = (static_cast<double>(c) + 0.5) / static_cast<double>(w) * 2.0 - 1.0;
            const double rb = body.radius(u, v);
            double val = 0.0;
            const double wb = edge_weight(rb, 0.04);
            if (wb > 0.0) {
                const double phase = kTwoPi * p.texture_frequency * (u * std::cos(tex_dir) + v * std::sin(tex_dir)) / 2.0;
                val = wb * p.body_intensity * (1.0 + p.texture_amplitude * std::sin(phase + tex_phase));
                if (p.rim_intensity > 0.0 && rb > 0.9) val = wb * p.rim_intensity;
                for (std::size_t k = 0; k < parts.size(); ++k) {
                    const double wk = edge_weight(parts[k].radius(u, v), 0.15) * wb;
                    val = val * (1.0 - wk) + levels[k] * wk;
                }
            }
            img.pixels[static_cast<std::size_t>(r * w + c)] = std::max(0.0, val + p.noise * std::abs(rng.normal()));
        }
    }
    return img;
}

std::int64_t floor_half(std::int64_t v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

}  // namespace

std::vector<GrayImage> generate_raw_phantoms(const AnatomyProfile& profile, std::int64_t count, std::int64_t height,
                                             std::int64_t width, std::uint64_t seed)
{
    if (height <= 0 || width <= 0) {
        throw ConfigError("phantom extent must be positive, got " + std::to_string(height) + "x" + std::to_string(width));
    }
    std::vector<GrayImage> out;
    out.reserve(static_cast<std::size_t>(std::max<std::int64_t>(count, 0)));
    for (std::int64_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, "phantom", {static_cast<std::uint64_t>(i)}));
        out.push_back(draw_phantom(profile, height, width, rng));
    }
    return out;
}

kspace::ComplexImage preprocess(const GrayImage& raw, std::int64_t height, std::int64_t width)
{
    if (raw.height <= 0 || raw.width <= 0 || raw.pixels.size() != static_cast<std::size_t>(raw.height * raw.width)) {
        throw DataError("malformed raw image");
    }
    kspace::ComplexImage out(height, width);
    const std::int64_t r0 = floor_half(raw.height - height);
    const std::int64_t c0 = floor_half(raw.width - width);
    for (std::int64_t r = 0; r < height; ++r) {
        const std::int64_t sr = r + r0;
        if (sr < 0 || sr >= raw.height) continue;
        for (std::int64_t c = 0; c < width; ++c) {
            const std::int64_t sc = c + c0;
            if (sc < 0 || sc >= raw.width) continue;
            out.real[static_cast<std::size_t>(r * width + c)] = raw.pixels[static_cast<std::size_t>(sr * raw.width + sc)];
        }
    }
    const double n = static_cast<double>(out.real.size());
    double mean = 0.0;
    for (double v : out.real) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : out.real) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) throw DataError("slice has zero standard deviation");
    for (double& v : out.real) v = std::clamp((v - mean) / sd, -kClipLimit, kClipLimit);
    return out;
}

std::vector<Slice> generate_phantoms(const AnatomyProfile& profile, const AnatomyId& anatomy, std::int64_t count,
                                     std::int64_t height, std::int64_t width, std::uint64_t seed, SkipReport* skips)
{
    const auto raw = generate_raw_phantoms(profile, count, height, width, seed);
    std::vector<Slice> out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        try {
            Slice s;
            s.image = preprocess(raw[i], height, width);
            s.anatomy = anatomy;
            s.index = static_cast<std::int64_t>(out.size());
            s.provenance = "phantom:" + profile.label + ":" + hex64(seed) + ":" + std::to_string(i);
            out.push_back(std::move(s));
        } catch (const DataError& e) {
            if (skips) skips->entries.push_back("phantom " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

BatchPlan make_epoch_plan(const std::vector<PlanSource>& sources, int batch_size, std::uint64_t seed, Regime regime,
                          bool truncate_to_min)
{
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (sources.empty()) throw DataError("epoch plan needs at least one anatomy");
    if (regime == Regime::oaon && sources.size() != 1) {
        throw ConfigError("an oaon plan covers exactly one anatomy, got " + std::to_string(sources.size()));
    }
    std::int64_t n = sources.front().count;
    for (const auto& s : sources) {
        if (s.count != sources.front().count && !truncate_to_min) {
            throw DataError("anatomies have unequal slice counts (" + std::to_string(sources.front().count) + " vs " +
                            std::to_string(s.count) + "); enable truncate_to_min to equalise");
        }
        n = std::min(n, s.count);
    }
    if (n <= 0) throw DataError("epoch plan has no slices");

    std::vector<std::vector<Batch>> per_source;
    for (const auto& s : sources) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        Rng rng(derive_seed(seed, "shuffle", {static_cast<std::uint64_t>(s.anatomy)}));
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
        std::vector<Batch> batches;
        for (std::int64_t b = 0; b < n; b += batch_size) {
            Batch batch{s.anatomy, {}};
            for (std::int64_t i = b; i < std::min(n, b + batch_size); ++i) batch.indices.push_back(idx[static_cast<std::size_t>(i)]);
            batches.push_back(std::move(batch));
        }
        per_source.push_back(std::move(batches));
    }
    BatchPlan plan;
    for (std::size_t b = 0; b < per_source.front().size(); ++b) {
        for (auto& src : per_source) plan.batches.push_back(std::move(src[b]));
    }
    return plan;
}

namespace {

std::string next_token(std::istream& in)
{
    std::string tok;
    char ch = 0;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string rest;
            std::getline(in, rest);
            if (!tok.empty()) break;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(ch);
    }
    return tok;
}

std::int64_t parse_positive(const std::string& tok, const char* what)
{
    std::int64_t v = 0;
    try {
        std::size_t used = 0;
        v = std::stoll(tok, &used);
        if (used != tok.size()) v = 0;
    } catch (const std::exception&) {
        v = 0;
    }
    if (v <= 0) throw DataError(std::string("invalid PGM ") + what + " '" + tok + "'");
    return v;
}

void write_pgm_impl(const std::filesystem::path& path, const GrayImage& img, double lo, double hi, int maxval)
{
    if (!(hi > lo)) throw DataError("PGM export needs hi > lo");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
    for (double v : img.pixels) {
        const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::lround(t * maxval));
        if (maxval > 255) out.put(static_cast<char>(q >> 8));
        out.put(static_cast<char>(q & 0xff));
    }
    if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    const std::string magic = next_token(in);
    if (magic != "P5" && magic != "P2") throw DataError(path.string() + ": not a PGM file (magic '" + magic + "')");
    GrayImage img;
    img.width = parse_positive(next_token(in), "width");
    img.height = parse_positive(next_token(in), "height");
    const auto maxval = parse_positive(next_token(in), "maxval");
    if (maxval > 65535) throw DataError(path.string() + ": maxval above 65535");
    const auto n = static_cast<std::size_t>(img.width * img.height);
    img.pixels.resize(n);
    if (magic == "P5") {
        const int bytes = maxval > 255 ? 2 : 1;
        std::vector<unsigned char> buf(n * static_cast<std::size_t>(bytes));
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw DataError(path.string() + ": truncated pixel data");
        for (std::size_t i = 0; i < n; ++i) {
            const unsigned v = bytes == 2 ? (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1] : buf[i];
            img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const std::string tok = next_token(in);
            if (tok.empty()) throw DataError(path.string() + ": truncated pixel data");
            std::int64_t v = -1;
            try {
                v = std::stoll(tok);
            } catch (const std::exception&) {
            }
            if (v < 0 || v > maxval) throw DataError(path.string() + ": invalid sample '" + tok + "'");
            img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
        }
    }
    return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img, double lo, double hi)
{
    write_pgm_impl(path, img, lo, hi, 65535);
}

void write_pgm8(const std::filesystem::path& path, const GrayImage& img, double lo, double hi)
{
    write_pgm_impl(path, img, lo, hi, 255);
}

std::vector<Slice> ingest_external(const std::filesystem::path& dir, const AnatomyId& anatomy, std::int64_t height,
                                   std::int64_t width, SkipReport* skips)
{
    if (!std::filesystem::is_directory(dir)) throw DataError("ingest directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Slice> out;
    for (const auto& f : files) {
        try {
            Slice s;
            s.image = preprocess(read_pgm(f), height, width);
            s.anatomy = anatomy;
            s.index = static_cast<std::int64_t>(out.size());
            s.provenance = "file:" + f.string();
            out.push_back(std::move(s));
        } catch (const DataError& e) {
            if (skips) skips->entries.push_back(f.string() + ": " + e.what());
        }
    }
    if (out.empty()) throw DataError("no usable .pgm slices in " + dir.string());
    return out;
}

Corpus make_phantom_corpus(const std::vector<std::string>& labels, std::int64_t train_per_anatomy,
                           std::int64_t val_per_anatomy, std::int64_t height, std::int64_t width, std::uint64_t seed)
{
    Corpus corpus;
    corpus.seed = seed;
    for (std::size_t a = 0; a < labels.size(); ++a) {
        const AnatomyId id{static_cast<int>(a), labels[a]};
        const auto profile = default_profile(labels[a]);
        AnatomyData d;
        d.anatomy = id;
        d.train = generate_phantoms(profile, id, train_per_anatomy, height, width, derive_seed(seed, "phantom", {a, 0}));
        d.val = generate_phantoms(profile, id, val_per_anatomy, height, width, derive_seed(seed, "phantom", {a, 1}));
        for (auto& s : d.val) s.split = Split::val;
        corpus.anatomies.push_back(std::move(d));
    }
    return corpus;
}

namespace {

std::string slice_bytes(const kspace::ComplexImage& img)
{
    std::string bytes(img.size() * 2 * sizeof(double), '\0');
    std::memcpy(bytes.data(), img.real.data(), img.size() * sizeof(double));
    std::memcpy(bytes.data() + img.size() * sizeof(double), img.imag.data(), img.size() * sizeof(double));
    return bytes;
}

}  // namespace

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus)
{
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["seed"] = corpus.seed;
    manifest["slices"] = nlohmann::json::array();
    for (const auto& a : corpus.anatomies) {
        for (const auto* split : {&a.train, &a.val}) {
            for (const auto& s : *split) {
                const std::string name = a.anatomy.label + "_" + to_string(s.split) + "_" + std::to_string(s.index) + ".bin";
                const std::string bytes = slice_bytes(s.image);
                std::ofstream out(dir / name, std::ios::binary);
                out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
                if (!out) throw DataError("failed writing " + (dir / name).string());
                manifest["slices"].push_back({{"file", name},
                                              {"label", a.anatomy.label},
                                              {"anatomy", a.anatomy.index},
                                              {"split", to_string(s.split)},
                                              {"index", s.index},
                                              {"height", s.image.height},
                                              {"width", s.image.width},
                                              {"provenance", s.provenance},
                                              {"checksum", hex64(fnv1a(bytes))}});
            }
        }
    }
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) throw DataError("failed writing corpus manifest");
}

Corpus load_corpus(const std::filesystem::path& dir)
{
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("corpus manifest not found in " + dir.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("corpus manifest is not valid JSON: ") + e.what());
    }
    Corpus corpus;
    corpus.seed = manifest.value("seed", std::uint64_t{0});
    for (const auto& e : manifest.at("slices")) {
        const int idx = e.at("anatomy").get<int>();
        if (idx < 0) throw DataError("negative anatomy index in manifest");
        if (static_cast<std::size_t>(idx) >= corpus.anatomies.size()) corpus.anatomies.resize(static_cast<std::size_t>(idx) + 1);
        auto& a = corpus.anatomies[static_cast<std::size_t>(idx)];
        a.anatomy = {idx, e.at("label").get<std::string>()};
        Slice s;
        s.anatomy = a.anatomy;
        s.split = e.at("split").get<std::string>() == "val" ? Split::val : Split::train;
        s.index = e.at("index").get<std::int64_t>();
        s.provenance = e.value("provenance", std::string{});
        s.image = kspace::ComplexImage(e.at("height").get<std::int64_t>(), e.at("width").get<std::int64_t>());
        const auto file = dir / e.at("file").get<std::string>();
        std::ifstream bin(file, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
        if (!bin.good() && !bin.eof()) throw DataError("cannot read " + file.string());
        if (bytes.size() != s.image.size() * 2 * sizeof(double)) throw DataError(file.string() + ": unexpected size");
        if (hex64(fnv1a(bytes)) != e.at("checksum").get<std::string>()) throw DataError(file.string() + ": checksum mismatch");
        std::memcpy(s.image.real.data(), bytes.data(), s.image.size() * sizeof(double));
        std::memcpy(s.image.imag.data(), bytes.data() + s.image.size() * sizeof(double), s.image.size() * sizeof(double));
        (s.split == Split::val ? a.val : a.train).push_back(std::move(s));
    }
    return corpus;
}

std::string validation_fingerprint(const Corpus& corpus)
{
    std::uint64_t h = fnv1a("val");
    for (const auto& a : corpus.anatomies) {
        h = fnv1a(a.anatomy.label, h);
        for (const auto& s : a.val) h = fnv1a(slice_bytes(s.image), h);
    }
    return hex64(h);
}

}  // namespace mapn
