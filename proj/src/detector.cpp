#include "patchlab/detector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "net.hpp"
#include "parallel.hpp"

namespace patchlab {

using net::sigmoid;
using net::Tensor3;
using net::Trace;

double iou(const Box& a, const Box& b) {
    if (a.w < 0 || a.h < 0 || b.w < 0 || b.h < 0)
        throw std::invalid_argument("iou: negative box extent");
    const double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
    const double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

namespace {

void init_layer(ConvLayer& layer, std::mt19937_64& rng) {
    const int fan_in = layer.in_ch * layer.ksize * layer.ksize;
    const int fan_out = layer.out_ch * layer.ksize * layer.ksize;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    layer.w.resize(static_cast<std::size_t>(layer.out_ch) * layer.in_ch * layer.ksize * layer.ksize);
    layer.b.assign(layer.out_ch, 0.0);
    for (double& w : layer.w) w = dist(rng);
}

DetectorParams build(std::uint64_t seed, int input_rows, int input_cols, int classes,
                     const std::vector<int>& widths, int ksize) {
    if (classes < 1) throw std::invalid_argument("detector: classes must be >= 1");
    if (ksize < 1 || ksize % 2 == 0)
        throw std::invalid_argument("detector: kernel size must be odd");
    DetectorParams p;
    p.input_rows = input_rows;
    p.input_cols = input_cols;
    p.input_channels = 1;
    p.init_seed = seed;
    const int total_stride = 1 << static_cast<int>(widths.size());
    if (input_rows % total_stride != 0 || input_cols % total_stride != 0)
        throw std::invalid_argument("detector: input dims must be divisible by the grid stride");
    p.grid.cell_rows = input_rows / total_stride;
    p.grid.cell_cols = input_cols / total_stride;
    p.grid.anchors_per_cell = 1;
    p.grid.classes = classes;

    std::mt19937_64 rng(seed);
    int in_ch = 1;
    for (int w : widths) {
        ConvLayer layer;
        layer.in_ch = in_ch;
        layer.out_ch = w;
        layer.ksize = ksize;
        layer.stride = 2;
        layer.pad = ksize / 2;
        init_layer(layer, rng);
        p.layers.push_back(std::move(layer));
        in_ch = w;
    }
    ConvLayer head;
    head.in_ch = in_ch;
    head.out_ch = p.values_per_cell();
    head.ksize = 1;
    head.stride = 1;
    head.pad = 0;
    init_layer(head, rng);
    p.layers.push_back(std::move(head));
    return p;
}

} // namespace

DetectorParams make_detector(std::uint64_t seed, int input_rows, int input_cols, int classes) {
    // 7x7 kernels so one cell's receptive field (43 px) spans the whole
    // offset-constrained placement band around a figure.
    return build(seed, input_rows, input_cols, classes, {8, 16, 32}, 7);
}

DetectorParams make_detector_custom(std::uint64_t seed, int input_rows, int input_cols,
                                    int classes, const std::vector<int>& widths, int ksize) {
    return build(seed, input_rows, input_cols, classes, widths, ksize);
}

namespace {

GridOutput head_to_grid(const DetectorParams& params, const Tensor3& head) {
    GridOutput out;
    out.rows = head.h;
    out.cols = head.w;
    out.values_per_cell = params.values_per_cell();
    out.v.resize(static_cast<std::size_t>(head.h) * head.w * head.ch);
    for (int r = 0; r < head.h; ++r)
        for (int c = 0; c < head.w; ++c)
            for (int k = 0; k < head.ch; ++k)
                out.at(r, c, k) = head.at(k, r, c);
    return out;
}

void cell_softmax(const GridOutput& g, int r, int c, int classes, std::vector<double>& probs) {
    probs.resize(classes);
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < classes; ++k) mx = std::max(mx, g.at(r, c, 5 + k));
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) {
        probs[k] = std::exp(g.at(r, c, 5 + k) - mx);
        sum += probs[k];
    }
    for (double& p : probs) p /= sum;
}

struct CellConf {
    double conf = -1.0;
    int r = 0, c = 0;
    double obj = 0;                  // sigmoid of objectness logit
    std::vector<double> cls_probs;
};

CellConf max_cell_confidence(const DetectorParams& params, const GridOutput& g, int class_id) {
    if (class_id < 0 || class_id >= params.grid.classes)
        throw std::invalid_argument("confidence: unknown class id");
    CellConf best;
    std::vector<double> probs;
    for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) {
            const double obj = sigmoid(g.at(r, c, 4));
            cell_softmax(g, r, c, params.grid.classes, probs);
            const double conf = obj * probs[class_id];
            if (conf > best.conf) {
                best.conf = conf;
                best.r = r;
                best.c = c;
                best.obj = obj;
                best.cls_probs = probs;
            }
        }
    }
    return best;
}

} // namespace

GridOutput forward(const DetectorParams& params, const ImageF& img) {
    Trace trace;
    net::forward_trace(params, img, trace);
    return head_to_grid(params, trace.acts.back());
}

double confidence(const DetectorParams& params, const ImageF& img, int class_id) {
    GridOutput g = forward(params, img);
    return max_cell_confidence(params, g, class_id).conf;
}

ConfGrad confidence_and_gradient(const DetectorParams& params, const ImageF& img,
                                 const LossSpec& spec) {
    Trace trace;
    net::forward_trace(params, img, trace);
    GridOutput g = head_to_grid(params, trace.acts.back());
    CellConf best = max_cell_confidence(params, g, spec.class_id);

    // loss = scale * C^2 with C = obj * p[class_id] at the argmax cell
    const double dldc = 2.0 * spec.scale * best.conf;
    const Tensor3& head = trace.acts.back();
    Tensor3 dhead(head.ch, head.h, head.w);
    const double p_cid = best.cls_probs[spec.class_id];
    dhead.at(4, best.r, best.c) = dldc * p_cid * best.obj * (1.0 - best.obj);
    for (int k = 0; k < params.grid.classes; ++k) {
        const double dsoft = p_cid * ((k == spec.class_id ? 1.0 : 0.0) - best.cls_probs[k]);
        dhead.at(5 + k, best.r, best.c) = dldc * best.obj * dsoft;
    }

    ConfGrad out;
    out.conf = best.conf;
    net::backward_trace(params, trace, dhead, &out.grad, nullptr);
    return out;
}

ImageF input_gradient(const DetectorParams& params, const ImageF& img, const LossSpec& spec) {
    return confidence_and_gradient(params, img, spec).grad;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
        throw std::invalid_argument("nms: iou threshold must be in (0,1)");
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets[a].confidence > dets[b].confidence;
    });
    std::vector<bool> removed(dets.size(), false);
    std::vector<Detection> kept;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const std::size_t i = order[oi];
        if (removed[i]) continue;
        kept.push_back(dets[i]);
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            const std::size_t j = order[oj];
            if (!removed[j] && iou(dets[i].box, dets[j].box) > iou_threshold)
                removed[j] = true;
        }
    }
    return kept;
}

namespace {

Box clamp_box(Box b, int rows, int cols) {
    const double x0 = std::clamp(b.x0(), 0.0, static_cast<double>(cols));
    const double x1 = std::clamp(b.x1(), 0.0, static_cast<double>(cols));
    const double y0 = std::clamp(b.y0(), 0.0, static_cast<double>(rows));
    const double y1 = std::clamp(b.y1(), 0.0, static_cast<double>(rows));
    return Box{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
}

} // namespace

std::vector<Detection> detect(const DetectorParams& params, const Image8& img,
                              double conf_threshold, double iou_threshold) {
    GridOutput g = forward(params, to_float(img));
    const double sr = params.stride_rows();
    const double sc = params.stride_cols();
    std::vector<Detection> dets;
    std::vector<double> probs;
    for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) {
            const double obj = sigmoid(g.at(r, c, 4));
            cell_softmax(g, r, c, params.grid.classes, probs);
            int best_k = 0;
            for (int k = 1; k < params.grid.classes; ++k)
                if (probs[k] > probs[best_k]) best_k = k;
            const double conf = obj * probs[best_k];
            if (conf < conf_threshold) continue;
            Detection d;
            d.box.cx = (c + sigmoid(g.at(r, c, 0))) * sc;
            d.box.cy = (r + sigmoid(g.at(r, c, 1))) * sr;
            d.box.w = sigmoid(g.at(r, c, 2)) * params.input_cols;
            d.box.h = sigmoid(g.at(r, c, 3)) * params.input_rows;
            d.box = clamp_box(d.box, params.input_rows, params.input_cols);
            d.confidence = conf;
            d.class_id = best_k;
            d.class_probs = probs;
            dets.push_back(std::move(d));
        }
    }
    return nms(std::move(dets), iou_threshold);
}

double reported_confidence(const DetectorParams& params, const Image8& img,
                           double conf_threshold, double iou_threshold) {
    auto dets = detect(params, img, conf_threshold, iou_threshold);
    return dets.empty() ? 0.0 : dets.front().confidence;
}

// ---------------------------------------------------------------------------
// training

namespace {

struct CellTargets {
    std::vector<int> pos_cell;   // flat r*cols+c of cells holding a truth center
    std::vector<std::array<double, 4>> box_tgt;
    std::vector<int> cls_tgt;
};

CellTargets make_targets(const DetectorParams& p, const std::vector<TruthBox>& truth) {
    CellTargets t;
    const double sr = p.stride_rows();
    const double sc = p.stride_cols();
    for (const TruthBox& tb : truth) {
        int r = std::clamp(static_cast<int>(tb.box.cy / sr), 0, p.grid.cell_rows - 1);
        int c = std::clamp(static_cast<int>(tb.box.cx / sc), 0, p.grid.cell_cols - 1);
        t.pos_cell.push_back(r * p.grid.cell_cols + c);
        t.box_tgt.push_back({tb.box.cx / sc - c, tb.box.cy / sr - r,
                             tb.box.w / p.input_cols, tb.box.h / p.input_rows});
        t.cls_tgt.push_back(tb.class_id);
    }
    return t;
}

double safe_log(double v) { return std::log(std::max(v, 1e-12)); }

// Builds the gradient w.r.t. the raw head output for the supervised loss and
// returns the loss value. The background objectness term is averaged over the
// grid so the loss scale does not grow with cell count; positive cells keep
// their per-instance weights.
double loss_and_dhead(const DetectorParams& p, const GridOutput& g, const CellTargets& tgt,
                      const DetectorTrainConfig& cfg, Tensor3& dhead) {
    dhead.reshape(p.values_per_cell(), g.rows, g.cols);
    double loss = 0.0;
    std::vector<double> probs;
    const double neg_scale = cfg.lambda_neg / (static_cast<double>(g.rows) * g.cols);
    for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) {
            const int flat = r * g.cols + c;
            int pos_idx = -1;
            for (std::size_t i = 0; i < tgt.pos_cell.size(); ++i)
                if (tgt.pos_cell[i] == flat) pos_idx = static_cast<int>(i);
            const double y = pos_idx >= 0 ? 1.0 : 0.0;
            const double lambda = pos_idx >= 0 ? cfg.lambda_pos : neg_scale;
            const double pobj = sigmoid(g.at(r, c, 4));
            loss += -lambda * (y * safe_log(pobj) + (1.0 - y) * safe_log(1.0 - pobj));
            dhead.at(4, r, c) = lambda * (pobj - y);
            if (pos_idx < 0) continue;
            for (int k = 0; k < 4; ++k) {
                const double s = sigmoid(g.at(r, c, k));
                const double diff = s - tgt.box_tgt[pos_idx][k];
                loss += cfg.lambda_box * diff * diff;
                dhead.at(k, r, c) = cfg.lambda_box * 2.0 * diff * s * (1.0 - s);
            }
            cell_softmax(g, r, c, p.grid.classes, probs);
            const int yk = tgt.cls_tgt[pos_idx];
            loss += -safe_log(probs[yk]);
            for (int k = 0; k < p.grid.classes; ++k)
                dhead.at(5 + k, r, c) = probs[k] - (k == yk ? 1.0 : 0.0);
        }
    }
    return loss;
}

double rect_cover_fraction(int oi, int oj, int n, const Box& fig) {
    const double ry0 = oi, ry1 = oi + n, rx0 = oj, rx1 = oj + n;
    const double iy = std::max(0.0, std::min(ry1, fig.y1()) - std::max(ry0, fig.y0()));
    const double ix = std::max(0.0, std::min(rx1, fig.x1()) - std::max(rx0, fig.x0()));
    const double area = fig.w * fig.h;
    return area > 0 ? (ix * iy) / area : 0.0;
}

double rect_gap_to_box(int oi, int oj, int n, const Box& b) {
    const double dy = std::max({0.0, b.y0() - (oi + n), oi - b.y1()});
    const double dx = std::max({0.0, b.x0() - (oj + n), oj - b.x1()});
    return std::hypot(dx, dy);
}

// Occluder block in the style of the attack's patches: placed near the
// figure, capped so most of the figure stays visible, random texture.
void apply_occluder(ImageF& img, const std::vector<TruthBox>& truth, const AugmentConfig& aug,
                    std::mt19937_64& rng) {
    std::uniform_int_distribution<int> side_dist(aug.occluder_min, aug.occluder_max);
    const int n = std::min({side_dist(rng), img.rows, img.cols});
    std::uniform_int_distribution<int> oi_dist(0, img.rows - n);
    std::uniform_int_distribution<int> oj_dist(0, img.cols - n);
    int oi = -1, oj = -1;
    if (truth.empty()) {
        oi = oi_dist(rng);
        oj = oj_dist(rng);
    } else {
        const Box& fig = truth.front().box;
        for (int attempt = 0; attempt < 50; ++attempt) {
            const int ci = oi_dist(rng), cj = oj_dist(rng);
            if (rect_gap_to_box(ci, cj, n, fig) > aug.occluder_gap_limit) continue;
            if (rect_cover_fraction(ci, cj, n, fig) > aug.max_cover) continue;
            oi = ci;
            oj = cj;
            break;
        }
        if (oi < 0) return; // no acceptable placement found
    }
    std::uniform_int_distribution<int> tex_dist(0, 2);
    std::uniform_real_distribution<double> value_dist(0.0, 255.0);
    const int tex = tex_dist(rng);
    if (tex == 0) {
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) img.at(oi + r, oj + c) = value_dist(rng);
    } else if (tex == 1) {
        const double v = value_dist(rng);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) img.at(oi + r, oj + c) = v;
    } else {
        // binary noise softened by the same 3x3 blur the defense uses
        ImageF block(n, n, 1);
        std::bernoulli_distribution bit(0.5);
        for (double& v : block.pix) v = bit(rng) ? 255.0 : 0.0;
        if (n >= 3) block = gaussian_blur(block, make_gaussian_kernel(3, aug.blur_sigma));
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) img.at(oi + r, oj + c) = block.at(r, c);
    }
}

ImageF augment(const TrainingSample& sample, const AugmentConfig& aug, std::mt19937_64& rng) {
    ImageF img = to_float(sample.image);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    if (u01(rng) < aug.occluder_prob) apply_occluder(img, sample.truth, aug, rng);
    if (u01(rng) < aug.blur_prob)
        img = gaussian_blur(img, make_gaussian_kernel(3, aug.blur_sigma));
    if (u01(rng) < aug.noise_prob) {
        NoiseParams np;
        np.mu = 0.0;
        np.sigma = u01(rng) * aug.noise_sigma_max;
        np.seed = rng();
        img = add_gaussian_noise(img, np);
        for (double& v : img.pix) v = std::clamp(v, 0.0, 255.0);
    }
    return img;
}

} // namespace

DetectorTrainResult train_detector(const std::vector<TrainingSample>& dataset,
                                   const DetectorParams& init, const DetectorTrainConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("train_detector: empty dataset");
    if (cfg.epochs < 0 || cfg.batch_size < 1)
        throw std::invalid_argument("train_detector: bad epochs/batch size");

    DetectorTrainResult result;
    result.params = init;
    DetectorParams& p = result.params;

    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    constexpr int kChunks = 8;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const int bn = static_cast<int>(std::min<std::size_t>(cfg.batch_size, order.size() - start));
            // augmentation draws happen serially so the stream is stable
            std::vector<ImageF> imgs(bn);
            std::vector<CellTargets> tgts(bn);
            for (int i = 0; i < bn; ++i) {
                const TrainingSample& s = dataset[order[start + i]];
                imgs[i] = augment(s, cfg.aug, rng);
                tgts[i] = make_targets(p, s.truth);
            }
            std::vector<net::ParamGrads> grads(kChunks);
            std::vector<double> losses(kChunks, 0.0);
            for_chunks(bn, kChunks, cfg.threads, [&](int chunk, int begin, int end) {
                grads[chunk].init_like(p);
                Trace trace;
                Tensor3 dhead;
                for (int i = begin; i < end; ++i) {
                    net::forward_trace(p, imgs[i], trace);
                    GridOutput g = head_to_grid(p, trace.acts.back());
                    losses[chunk] += loss_and_dhead(p, g, tgts[i], cfg, dhead);
                    net::backward_trace(p, trace, dhead, nullptr, &grads[chunk]);
                }
            });
            net::ParamGrads total;
            total.init_like(p);
            for (int c = 0; c < kChunks; ++c) {
                if (!grads[c].dw.empty()) total.add(grads[c]);
                epoch_loss += losses[c];
            }
            const double scale = cfg.learning_rate / bn;
            for (std::size_t li = 0; li < p.layers.size(); ++li) {
                ConvLayer& layer = p.layers[li];
                for (std::size_t k = 0; k < layer.w.size(); ++k)
                    layer.w[k] -= scale * total.dw[li][k];
                for (std::size_t k = 0; k < layer.b.size(); ++k)
                    layer.b[k] -= scale * total.db[li][k];
            }
        }
        result.loss_curve.push_back(epoch_loss / dataset.size());
    }
    return result;
}

// ---------------------------------------------------------------------------
// serialization

static_assert(std::endian::native == std::endian::little,
              "detector blobs are little-endian; big-endian hosts unsupported");

void save_detector(const DetectorParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << "PATCHDET 1\n";
    out << "input " << params.input_rows << " " << params.input_cols << " "
        << params.input_channels << "\n";
    out << "grid " << params.grid.cell_rows << " " << params.grid.cell_cols << " "
        << params.grid.anchors_per_cell << " " << params.grid.classes << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", params.leak);
    out << "leak " << buf << "\n";
    out << "seed " << params.init_seed << "\n";
    out << "layers " << params.layers.size() << "\n";
    for (const ConvLayer& l : params.layers)
        out << "layer " << l.in_ch << " " << l.out_ch << " " << l.ksize << " " << l.stride << " "
            << l.pad << "\n";
    out << "data\n";
    std::vector<float> f;
    for (const ConvLayer& l : params.layers) {
        f.clear();
        f.reserve(l.w.size() + l.b.size());
        for (double v : l.w) f.push_back(static_cast<float>(v));
        for (double v : l.b) f.push_back(static_cast<float>(v));
        out.write(reinterpret_cast<const char*>(f.data()),
                  static_cast<std::streamsize>(f.size() * sizeof(float)));
    }
    if (!out) throw io_error("write failed: " + path);
}

DetectorParams load_detector(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::string line;
    auto next_line = [&]() -> std::string {
        if (!std::getline(in, line)) throw io_error("truncated detector file: " + path);
        return line;
    };
    if (next_line() != "PATCHDET 1")
        throw io_error("bad magic in detector file: " + path);
    DetectorParams p;
    std::size_t n_layers = 0;
    for (;;) {
        std::istringstream ls(next_line());
        std::string key;
        ls >> key;
        if (key == "input")
            ls >> p.input_rows >> p.input_cols >> p.input_channels;
        else if (key == "grid")
            ls >> p.grid.cell_rows >> p.grid.cell_cols >> p.grid.anchors_per_cell >> p.grid.classes;
        else if (key == "leak")
            ls >> p.leak;
        else if (key == "seed")
            ls >> p.init_seed;
        else if (key == "layers")
            ls >> n_layers;
        else if (key == "layer") {
            ConvLayer l;
            ls >> l.in_ch >> l.out_ch >> l.ksize >> l.stride >> l.pad;
            if (!ls) throw io_error("bad layer line in " + path);
            p.layers.push_back(std::move(l));
        } else if (key == "data")
            break;
        else
            throw io_error("unexpected header line in " + path + ": " + line);
        if (!ls) throw io_error("bad header line in " + path + ": " + line);
    }
    if (p.layers.size() != n_layers)
        throw io_error("layer count mismatch in " + path);
    for (ConvLayer& l : p.layers) {
        const std::size_t nw = static_cast<std::size_t>(l.out_ch) * l.in_ch * l.ksize * l.ksize;
        std::vector<float> f(nw + l.out_ch);
        in.read(reinterpret_cast<char*>(f.data()),
                static_cast<std::streamsize>(f.size() * sizeof(float)));
        if (static_cast<std::size_t>(in.gcount()) != f.size() * sizeof(float))
            throw io_error("truncated detector file: " + path);
        l.w.assign(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(nw));
        l.b.assign(f.begin() + static_cast<std::ptrdiff_t>(nw), f.end());
    }
    return p;
}

} // namespace patchlab
