#include "patchlab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "parallel.hpp"

namespace patchlab {

PlacementMask make_mask(int i, int j, int n, int rows, int cols) {
    if (n < 1) throw std::invalid_argument("make_mask: patch size must be >= 1");
    if (i < 0 || j < 0 || i + n > rows || j + n > cols)
        throw std::invalid_argument("make_mask: placement outside image bounds");
    PlacementMask m;
    m.i = i;
    m.j = j;
    m.n = n;
    m.rows = rows;
    m.cols = cols;
    m.row_ind.assign(rows, 0);
    m.col_ind.assign(cols, 0);
    std::fill(m.row_ind.begin() + i, m.row_ind.begin() + i + n, std::uint8_t{1});
    std::fill(m.col_ind.begin() + j, m.col_ind.begin() + j + n, std::uint8_t{1});
    return m;
}

ImageF apply_patch(const ImageF& x, const Patch& z, const PlacementMask& mask) {
    if (mask.rows != x.rows || mask.cols != x.cols)
        throw std::invalid_argument("apply_patch: mask/image shape mismatch");
    if (mask.n != z.size) throw std::invalid_argument("apply_patch: mask/patch size mismatch");
    ImageF out = x;
    for (int r = 0; r < z.size; ++r)
        for (int c = 0; c < z.size; ++c)
            for (int ch = 0; ch < x.channels; ++ch)
                out.at(mask.i + r, mask.j + c, ch) = z.at(r, c);
    return out;
}

double rect_gap(int i, int j, int n, const Box& b) {
    const double dy = std::max({0.0, b.y0() - (i + n), i - b.y1()});
    const double dx = std::max({0.0, b.x0() - (j + n), j - b.x1()});
    return std::hypot(dx, dy);
}

std::vector<std::pair<int, int>> enumerate_feasible(const Box& object_box, int n, int rows,
                                                    int cols, double offset_limit) {
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i + n <= rows; ++i)
        for (int j = 0; j + n <= cols; ++j)
            if (rect_gap(i, j, n, object_box) <= offset_limit) out.emplace_back(i, j);
    return out;
}

std::vector<std::pair<int, int>> sample_placements(const EOTConfig& cfg, const Box& object_box,
                                                   int n, int rows, int cols) {
    if (cfg.transforms_per_step < 1)
        throw std::invalid_argument("sample_placements: transforms_per_step must be >= 1");
    auto feasible = enumerate_feasible(object_box, n, rows, cols, cfg.offset_limit);
    if (feasible.empty())
        throw config_error("sample_placements: no feasible placement for this configuration");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, feasible.size() - 1);
    std::vector<std::pair<int, int>> out;
    out.reserve(cfg.transforms_per_step);
    for (int k = 0; k < cfg.transforms_per_step; ++k) out.push_back(feasible[pick(rng)]);
    return out;
}

double eot_loss(const DetectorParams& params, const std::vector<ImageF>& images, const Patch& z,
                const std::vector<std::vector<std::pair<int, int>>>& placements_per_image,
                int class_id) {
    if (images.empty() || placements_per_image.size() != images.size())
        throw std::invalid_argument("eot_loss: images/placements mismatch");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t ii = 0; ii < images.size(); ++ii) {
        for (const auto& [pi, pj] : placements_per_image[ii]) {
            const PlacementMask m = make_mask(pi, pj, z.size, images[ii].rows, images[ii].cols);
            const double c = confidence(params, apply_patch(images[ii], z, m), class_id);
            sum += c * c;
            ++count;
        }
    }
    if (count == 0) throw std::invalid_argument("eot_loss: no placements given");
    return sum / static_cast<double>(count);
}

std::vector<double> momentum_blend(const std::vector<double>& grad_now, MomentumState& state,
                                   double alpha) {
    if (state.prev_grad.empty()) state.prev_grad.assign(grad_now.size(), 0.0);
    if (state.prev_grad.size() != grad_now.size())
        throw std::invalid_argument("momentum_blend: shape mismatch");
    std::vector<double> out(grad_now.size());
    for (std::size_t k = 0; k < grad_now.size(); ++k)
        out[k] = alpha * grad_now[k] + (1.0 - alpha) * state.prev_grad[k];
    state.prev_grad = out;
    return out;
}

Patch fgsm_step(const Patch& z, const std::vector<double>& grad, const FGSMConfig& cfg) {
    if (grad.size() != z.v.size()) throw std::invalid_argument("fgsm_step: shape mismatch");
    Patch out = z;
    for (std::size_t k = 0; k < grad.size(); ++k) {
        const double s = grad[k] > 0.0 ? 1.0 : (grad[k] < 0.0 ? -1.0 : 0.0);
        out.v[k] = std::clamp(out.v[k] - cfg.epsilon * s, cfg.clip_lo, cfg.clip_hi);
    }
    return out;
}

Patch random_noise_patch(int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("random_noise_patch: size must be >= 1");
    Patch z(n);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, 255.0);
    for (double& v : z.v) v = dist(rng);
    return z;
}

PatchTrainResult train_patch(const DetectorParams& params,
                             const std::vector<TrainingSample>& train_images, int patch_size,
                             const EOTConfig& eot, const FGSMConfig& fgsm,
                             std::uint64_t init_seed, int threads) {
    if (train_images.empty()) throw std::invalid_argument("train_patch: empty image set");
    if (!(fgsm.alpha >= 0.0 && fgsm.alpha <= 1.0))
        throw std::invalid_argument("train_patch: momentum alpha must be in [0,1]");
    if (!(fgsm.epsilon >= 0.0)) throw std::invalid_argument("train_patch: epsilon must be >= 0");

    std::vector<ImageF> imgs;
    std::vector<std::vector<std::pair<int, int>>> feasible;
    imgs.reserve(train_images.size());
    feasible.reserve(train_images.size());
    for (const TrainingSample& s : train_images) {
        if (s.truth.empty())
            throw std::invalid_argument("train_patch: every training image needs a truth box");
        imgs.push_back(to_float(s.image));
        feasible.push_back(enumerate_feasible(s.truth.front().box, patch_size, s.image.rows,
                                              s.image.cols, eot.offset_limit));
        if (feasible.back().empty())
            throw config_error("train_patch: no feasible placement on a training image");
    }

    PatchTrainResult result;
    result.patch = random_noise_patch(patch_size, init_seed);
    MomentumState momentum;
    std::mt19937_64 rng(eot.seed);
    std::uniform_int_distribution<std::size_t> img_pick(0, imgs.size() - 1);

    const int batch = eot.transforms_per_step;
    const std::size_t zlen = result.patch.v.size();
    constexpr int kChunks = 8;

    for (int iter = 0; iter < fgsm.iterations; ++iter) {
        struct Draw {
            std::size_t img;
            int i, j;
        };
        std::vector<Draw> draws(batch);
        for (int k = 0; k < batch; ++k) {
            const std::size_t ii = img_pick(rng);
            const auto& feas = feasible[ii];
            std::uniform_int_distribution<std::size_t> pick(0, feas.size() - 1);
            const auto [pi, pj] = feas[pick(rng)];
            draws[k] = {ii, pi, pj};
        }
        std::vector<std::vector<double>> grad_chunks(kChunks);
        std::vector<double> loss_chunks(kChunks, 0.0), conf_chunks(kChunks, 0.0);
        for_chunks(batch, kChunks, threads, [&](int chunk, int begin, int end) {
            grad_chunks[chunk].assign(zlen, 0.0);
            for (int k = begin; k < end; ++k) {
                const Draw& d = draws[k];
                const ImageF& x = imgs[d.img];
                const PlacementMask m = make_mask(d.i, d.j, patch_size, x.rows, x.cols);
                const ImageF patched = apply_patch(x, result.patch, m);
                const ConfGrad cg = confidence_and_gradient(params, patched, LossSpec{0, 1.0});
                loss_chunks[chunk] += cg.conf * cg.conf;
                conf_chunks[chunk] += cg.conf;
                // replacement semantics: inside the mask d(patched)/dz = 1
                for (int r = 0; r < patch_size; ++r)
                    for (int c = 0; c < patch_size; ++c)
                        grad_chunks[chunk][static_cast<std::size_t>(r) * patch_size + c] +=
                            cg.grad.at(d.i + r, d.j + c);
            }
        });
        std::vector<double> grad(zlen, 0.0);
        double loss = 0.0, conf_sum = 0.0;
        for (int c = 0; c < kChunks; ++c) {
            if (!grad_chunks[c].empty())
                for (std::size_t k = 0; k < zlen; ++k) grad[k] += grad_chunks[c][k];
            loss += loss_chunks[c];
            conf_sum += conf_chunks[c];
        }
        for (double& gv : grad) gv /= batch;
        loss /= batch;
        conf_sum /= batch;

        const std::vector<double> blended = momentum_blend(grad, momentum, fgsm.alpha);
        result.patch = fgsm_step(result.patch, blended, fgsm);
        result.curve.push_back({iter, loss, conf_sum});
    }
    return result;
}

Heatmap confidence_heatmap(const DetectorParams& params, const TrainingSample& scene,
                           const Patch& z, int stride, double offset_limit, int threads) {
    if (stride < 1) throw std::invalid_argument("confidence_heatmap: stride must be >= 1");
    if (scene.truth.empty())
        throw std::invalid_argument("confidence_heatmap: scene needs a truth box");
    if (z.size > scene.image.rows || z.size > scene.image.cols)
        throw std::invalid_argument("confidence_heatmap: patch larger than image");

    Heatmap hm;
    hm.stride = stride;
    hm.patch_size = z.size;
    hm.image_rows = scene.image.rows;
    hm.image_cols = scene.image.cols;
    hm.rows = (scene.image.rows - 1) / stride + 1;
    hm.cols = (scene.image.cols - 1) / stride + 1;
    hm.object_box = scene.truth.front().box;
    hm.offset_limit = offset_limit;
    hm.conf.assign(static_cast<std::size_t>(hm.rows) * hm.cols, -1.0);
    hm.in_bounds.assign(hm.conf.size(), 0);

    const ImageF base = to_float(scene.image);
    const int total = hm.rows * hm.cols;
    constexpr int kChunks = 16;
    for_chunks(total, kChunks, threads, [&](int, int begin, int end) {
        for (int idx = begin; idx < end; ++idx) {
            const int a = idx / hm.cols, b = idx % hm.cols;
            const int oi = hm.origin_row(a), oj = hm.origin_col(b);
            if (oi < 0 || oj < 0 || oi + z.size > base.rows || oj + z.size > base.cols)
                continue; // border region: patch would exceed the image
            const PlacementMask m = make_mask(oi, oj, z.size, base.rows, base.cols);
            // measure on the quantized image, same basis as the report tables
            const ImageF patched = to_float(to_u8(apply_patch(base, z, m)));
            hm.conf[idx] = confidence(params, patched, 0);
            hm.in_bounds[idx] = 1;
        }
    });
    return hm;
}

HeatmapStats heatmap_stats(const Heatmap& hm, double conf_threshold) {
    HeatmapStats st;
    double edge_sum = 0.0, interior_sum = 0.0;
    int below = 0;
    // in-bounds origin extremes
    const int oi_max = hm.image_rows - hm.patch_size;
    const int oj_max = hm.image_cols - hm.patch_size;
    for (int a = 0; a < hm.rows; ++a) {
        for (int b = 0; b < hm.cols; ++b) {
            const std::size_t idx = static_cast<std::size_t>(a) * hm.cols + b;
            if (!hm.in_bounds[idx]) continue;
            const int oi = hm.origin_row(a), oj = hm.origin_col(b);
            const double gap = rect_gap(oi, oj, hm.patch_size, hm.object_box);
            if (gap <= hm.offset_limit) {
                interior_sum += hm.conf[idx];
                ++st.n_interior;
                if (hm.conf[idx] < conf_threshold) ++below;
            } else if (oi < hm.stride || oj < hm.stride || oi > oi_max - hm.stride ||
                       oj > oj_max - hm.stride) {
                edge_sum += hm.conf[idx];
                ++st.n_edge;
            }
        }
    }
    if (st.n_edge > 0) st.edge_mean = edge_sum / st.n_edge;
    if (st.n_interior > 0) {
        st.interior_mean = interior_sum / st.n_interior;
        st.interior_frac_below = static_cast<double>(below) / st.n_interior;
    }
    return st;
}

void save_heatmap(const Heatmap& hm, const std::string& path_base) {
    Image8 img(hm.rows, hm.cols, 1);
    for (std::size_t idx = 0; idx < hm.conf.size(); ++idx)
        img.pix[idx] = hm.in_bounds[idx]
                           ? static_cast<std::uint8_t>(std::lround(hm.conf[idx] * 254.0))
                           : std::uint8_t{255};
    save_image(img, path_base + ".pgm");

    std::ofstream out(path_base + ".txt");
    if (!out) throw io_error("cannot open " + path_base + ".txt for writing");
    char buf[128];
    out << "heatmap v1\n";
    out << "stride " << hm.stride << "\n";
    out << "patch_size " << hm.patch_size << "\n";
    out << "image " << hm.image_rows << " " << hm.image_cols << "\n";
    out << "lattice " << hm.rows << " " << hm.cols << "\n";
    std::snprintf(buf, sizeof buf, "object_box %.17g %.17g %.17g %.17g", hm.object_box.cx,
                  hm.object_box.cy, hm.object_box.w, hm.object_box.h);
    out << buf << "\n";
    std::snprintf(buf, sizeof buf, "offset_limit %.17g", hm.offset_limit);
    out << buf << "\n";
    out << "border_value 255\n";
    for (int a = 0; a < hm.rows; ++a) {
        for (int b = 0; b < hm.cols; ++b) {
            const std::size_t idx = static_cast<std::size_t>(a) * hm.cols + b;
            if (b) out << ",";
            if (hm.in_bounds[idx]) {
                std::snprintf(buf, sizeof buf, "%.17g", hm.conf[idx]);
                out << buf;
            } else {
                out << "border";
            }
        }
        out << "\n";
    }
    if (!out) throw io_error("write failed: " + path_base + ".txt");
}

void save_patch(const Patch& z, const std::string& path_base) {
    ImageF f(z.size, z.size, 1);
    f.pix = z.v;
    save_image(to_u8(f), path_base + ".pgm");
    std::ofstream out(path_base + ".txt");
    if (!out) throw io_error("cannot open " + path_base + ".txt for writing");
    out << "size " << z.size << "\n";
    char buf[64];
    for (double v : z.v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf << "\n";
    }
    if (!out) throw io_error("write failed: " + path_base + ".txt");
}

Patch load_patch(const std::string& path_base) {
    std::ifstream in(path_base + ".txt");
    if (!in) throw io_error("cannot open " + path_base + ".txt");
    std::string key;
    int n = 0;
    in >> key >> n;
    if (key != "size" || n < 1) throw io_error("bad patch file: " + path_base + ".txt");
    Patch z(n);
    for (double& v : z.v)
        if (!(in >> v)) throw io_error("truncated patch file: " + path_base + ".txt");
    return z;
}

void save_patch_curve(const std::vector<PatchCurvePoint>& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << "iteration,loss,mean_train_confidence\n";
    char buf[96];
    for (const PatchCurvePoint& p : curve) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g", p.iteration, p.loss, p.mean_confidence);
        out << buf << "\n";
    }
    if (!out) throw io_error("write failed: " + path);
}

} // namespace patchlab
