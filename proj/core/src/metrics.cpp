#include "mapn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mapn/error.hpp"

namespace mapn::metrics {

namespace {

void require_pair(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size() || a.empty()) {
        throw DataError("metric inputs differ in size (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
}

std::pair<double, double> range_of(const std::vector<double>& v)
{
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return {*lo, *hi};
}

std::vector<double> gaussian_kernel(int window, double sigma)
{
    std::vector<double> k(static_cast<std::size_t>(window));
    const double c = (window - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < window; ++i) {
        k[static_cast<std::size_t>(i)] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
        total += k[static_cast<std::size_t>(i)];
    }
    for (double& v : k) v /= total;
    return k;
}

// Valid-mode separable filtering: rows first, then columns.
std::vector<double> filter_valid(const std::vector<double>& img, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& k)
{
    const auto n = static_cast<std::int64_t>(k.size());
    const std::int64_t oh = h - n + 1, ow = w - n + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h * ow));
    for (std::int64_t r = 0; r < h; ++r) {
        for (std::int64_t c = 0; c < ow; ++c) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(r * w + c + i)];
            tmp[static_cast<std::size_t>(r * ow + c)] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh * ow));
    for (std::int64_t r = 0; r < oh; ++r) {
        for (std::int64_t c = 0; c < ow; ++c) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>((r + i) * ow + c)];
            out[static_cast<std::size_t>(r * ow + c)] = s;
        }
    }
    return out;
}

}  // namespace

std::vector<double> rescale_to(const std::vector<double>& img, const std::vector<double>& reference)
{
    const auto [lo, hi] = range_of(reference);
    const double span = hi > lo ? hi - lo : 1.0;
    std::vector<double> out(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = (img[i] - lo) / span;
    return out;
}

double psnr(const std::vector<double>& recon, const std::vector<double>& target)
{
    require_pair(recon, target);
    const auto r = rescale_to(recon, target);
    const auto t = rescale_to(target, target);
    double mse = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) mse += (r[i] - t[i]) * (r[i] - t[i]);
    mse /= static_cast<double>(r.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double ssim(const std::vector<double>& recon, const std::vector<double>& target, std::int64_t height,
            std::int64_t width, const SsimOptions& options)
{
    require_pair(recon, target);
    if (static_cast<std::size_t>(height * width) != target.size()) throw DataError("ssim: extent does not match data");
    if (height < options.window || width < options.window) {
        throw DataError("ssim: image " + std::to_string(height) + "x" + std::to_string(width) + " is smaller than the " +
                        std::to_string(options.window) + "-pixel window");
    }
    const auto x = rescale_to(recon, target);
    const auto y = rescale_to(target, target);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto k = gaussian_kernel(options.window, options.sigma);
    const auto mx = filter_valid(x, height, width, k);
    const auto my = filter_valid(y, height, width, k);
    const auto exx = filter_valid(xx, height, width, k);
    const auto eyy = filter_valid(yy, height, width, k);
    const auto exy = filter_valid(xy, height, width, k);
    const double c1 = options.k1 * options.k1;
    const double c2 = options.k2 * options.k2;
    double total = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double sxx = exx[i] - mx[i] * mx[i];
        const double syy = eyy[i] - my[i] * my[i];
        const double sxy = exy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * sxy + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (sxx + syy + c2));
    }
    return total / static_cast<double>(mx.size());
}

GrayImage error_map(const std::vector<double>& recon, const std::vector<double>& target, std::int64_t height,
                    std::int64_t width, double clip)
{
    require_pair(recon, target);
    const auto r = rescale_to(recon, target);
    const auto t = rescale_to(target, target);
    GrayImage out{height, width, std::vector<double>(r.size())};
    for (std::size_t i = 0; i < r.size(); ++i) out.pixels[i] = std::min(clip, std::abs(r[i] - t[i]));
    return out;
}

std::vector<WeightRow> learner_weight_summary(const Model& model)
{
    std::vector<WeightRow> rows;
    const auto& reg = model.registry();
    for (const auto& block : model.blocks()) {
        int cascade = -1, index = -1;
        std::sscanf(block.prefix().c_str(), "c%d.b%d", &cascade, &index);
        const std::vector<std::pair<std::string, std::string>> learners = {
            {"bn_gamma", block.bn_name("gamma")},
            {"bn_beta", block.bn_name("beta")},
            {"adapter1x1", block.adapter_name()},
            {"se_fc1", block.se_name(1)},
            {"se_fc2", block.se_name(2)},
        };
        for (int a = 0; a < reg.anatomy_count(); ++a) {
            const auto& set = reg.specific(a);
            for (const auto& [kind, name] : learners) {
                const auto it = set.find(name);
                if (it == set.end()) continue;
                const auto data = it->second.value.data();
                double s = 0.0;
                for (double v : data) s += v;
                rows.push_back({block.prefix(), cascade, index, reg.anatomies()[static_cast<std::size_t>(a)], kind,
                                s / static_cast<double>(data.size())});
            }
        }
    }
    return rows;
}

void write_weight_summary(const std::filesystem::path& path, const std::vector<WeightRow>& rows)
{
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "block,cascade,index,anatomy,learner,mean\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g", r.mean);
        out << r.block << ',' << r.cascade << ',' << r.index << ',' << r.anatomy << ',' << r.learner << ',' << buf << '\n';
    }
}

std::vector<CountRow> count_report(const ModelSpec& base, int anatomies)
{
    if (anatomies < 1) throw ConfigError("count_report needs at least one anatomy");
    std::vector<std::string> labels;
    const char* defaults[] = {"knee", "brain", "cardiac"};
    for (int i = 0; i < anatomies; ++i) labels.push_back(i < 3 ? defaults[i] : "anatomy" + std::to_string(i));
    const auto n = static_cast<std::int64_t>(anatomies);

    auto spec_for = [&](PnKind pn, bool shared) {
        ModelSpec s = base;
        s.pn = pn;
        s.shared_learners = shared;
        return s;
    };
    auto report = [&](const ModelSpec& s) { return partition_report(Model(s, labels, 0)); };

    std::vector<CountRow> rows;
    const auto plain = report(spec_for(PnKind::pn0, false));
    rows.push_back({"OAON", "DCCNN", 0, plain.total, n * plain.total});
    rows.push_back({"MAON", "DCCNN", plain.total, 0, plain.total});
    const auto maon_pn4 = report(spec_for(PnKind::pn4, true));
    rows.push_back({"MAON", "DCCNN+PN4", maon_pn4.shared_count, 0, maon_pn4.total});
    for (PnKind pn : {PnKind::pn1, PnKind::pn2, PnKind::pn3, PnKind::pn4}) {
        const auto r = report(spec_for(pn, false));
        std::string label = to_string(pn);
        std::transform(label.begin(), label.end(), label.begin(), [](unsigned char c) { return std::toupper(c); });
        rows.push_back({"MAPN", "DCCNN+" + label, r.shared_count, r.specific_count_per_anatomy, r.total});
    }
    return rows;
}

void write_count_report(const std::filesystem::path& path, const std::vector<CountRow>& rows)
{
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << format_count_report(rows);
}

std::string format_count_report(const std::vector<CountRow>& rows)
{
    std::ostringstream out;
    out << "fashion,model,shared,specific,sum,shared_k,specific_k,sum_k\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%lld,%lld,%lld,%.2f,%.2f,%.2f\n", r.fashion.c_str(), r.model.c_str(),
                      static_cast<long long>(r.shared), static_cast<long long>(r.specific),
                      static_cast<long long>(r.sum), r.shared / 1000.0, r.specific / 1000.0, r.sum / 1000.0);
        out << buf;
    }
    return out.str();
}

}  // namespace mapn::metrics
