#include "puridiff/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "puridiff/errors.hpp"

namespace puridiff {

namespace {

const char* kSeriesColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                               "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

void write_svg_lineplot(const std::string& path, const std::string& title,
                        const std::string& xlabel, const std::string& ylabel,
                        const std::vector<PlotSeries>& series) {
    const int w = 640, h = 420;
    const int ml = 70, mr = 160, mt = 40, mb = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmin > xmax) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    svg << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << (w - mr + ml) / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";

    // axes
    svg << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
        << h - mb << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        double xv = xmin + (xmax - xmin) * i / 5.0;
        double yv = ymin + (ymax - ymin) * i / 5.0;
        svg << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(xv)
            << "</text>\n";
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << py(yv) + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(yv)
            << "</text>\n";
        svg << "<line x1=\"" << ml << "\" y1=\"" << py(yv) << "\" x2=\"" << w - mr << "\" y2=\""
            << py(yv) << "\" stroke=\"#dddddd\"/>\n";
    }
    svg << "<text x=\"" << (w - mr + ml) / 2 << "\" y=\"" << h - 12
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << xlabel
        << "</text>\n";
    svg << "<text x=\"18\" y=\"" << (h - mb + mt) / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
        << "transform=\"rotate(-90 18 " << (h - mb + mt) / 2 << ")\">" << ylabel << "</text>\n";

    for (size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = kSeriesColors[k % 8];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < s.x.size(); ++i)
            svg << fmt(px(s.x[i])) << "," << fmt(py(s.y[i])) << " ";
        svg << "\"/>\n";
        for (size_t i = 0; i < s.x.size(); ++i)
            svg << "<circle cx=\"" << fmt(px(s.x[i])) << "\" cy=\"" << fmt(py(s.y[i]))
                << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        int ly = mt + 18 * static_cast<int>(k);
        svg << "<line x1=\"" << w - mr + 10 << "\" y1=\"" << ly << "\" x2=\"" << w - mr + 34
            << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << w - mr + 40 << "\" y=\"" << ly + 4
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label << "</text>\n";
    }
    svg << "</svg>\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open '" + path + "' for writing");
    f << svg.str();
}

void write_bmp_grid(const std::string& path, const std::vector<std::vector<double>>& images,
                    int h, int w, int grid_rows, int grid_cols, int upscale) {
    if (static_cast<int>(images.size()) > grid_rows * grid_cols)
        throw argument_error("write_bmp_grid: more images than grid cells");
    int cell_h = h * upscale, cell_w = w * upscale;
    int img_h = grid_rows * cell_h + (grid_rows - 1);
    int img_w = grid_cols * cell_w + (grid_cols - 1);
    std::vector<unsigned char> gray(static_cast<size_t>(img_h) * img_w, 40);  // separator tone

    for (size_t k = 0; k < images.size(); ++k) {
        int gr = static_cast<int>(k) / grid_cols;
        int gc = static_cast<int>(k) % grid_cols;
        int oy = gr * (cell_h + 1), ox = gc * (cell_w + 1);
        const auto& im = images[k];
        for (int i = 0; i < cell_h; ++i)
            for (int j = 0; j < cell_w; ++j) {
                double v = im[static_cast<size_t>(i / upscale) * w + j / upscale];
                v = std::min(1.0, std::max(0.0, v));
                gray[static_cast<size_t>(oy + i) * img_w + ox + j] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
    }

    int row_bytes = (img_w * 3 + 3) / 4 * 4;
    uint32_t data_size = static_cast<uint32_t>(row_bytes) * img_h;
    uint32_t file_size = 54 + data_size;
    std::vector<unsigned char> out;
    out.reserve(file_size);
    auto put16 = [&](uint16_t v) {
        out.push_back(v & 0xff);
        out.push_back((v >> 8) & 0xff);
    };
    auto put32 = [&](uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
    };
    put16(0x4d42);  // 'BM'
    put32(file_size);
    put32(0);
    put32(54);
    put32(40);  // BITMAPINFOHEADER
    put32(static_cast<uint32_t>(img_w));
    put32(static_cast<uint32_t>(img_h));
    put16(1);
    put16(24);
    put32(0);
    put32(data_size);
    put32(2835);
    put32(2835);
    put32(0);
    put32(0);
    for (int i = img_h - 1; i >= 0; --i) {  // bottom-up rows
        size_t start = out.size();
        for (int j = 0; j < img_w; ++j) {
            unsigned char v = gray[static_cast<size_t>(i) * img_w + j];
            out.push_back(v);
            out.push_back(v);
            out.push_back(v);
        }
        while (out.size() - start < static_cast<size_t>(row_bytes)) out.push_back(0);
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

}  // namespace puridiff
