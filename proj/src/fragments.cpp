#include "fragvqa/fragments.hpp"

#include <algorithm>
#include <cmath>

namespace fragvqa::fragments {

namespace {

void check_video(const VideoTensor& v) {
    check(v.frames.rank() == 4, "video tensor must be T x H x W x C");
    check(v.t() >= 1, "video needs at least one frame");
    const double* p = v.frames.data();
    for (std::int64_t i = 0; i < v.frames.numel(); ++i)
        if (!std::isfinite(p[i])) throw InvalidArgument("video contains non-finite values");
}

}  // namespace

std::vector<std::int64_t> temporal_indices(std::int64_t t_total, int num_frames, int interval,
                                           Rng& rng) {
    check(num_frames >= 1 && interval >= 1, "num_frames and interval must be positive");
    check(t_total >= 1, "empty video");
    std::int64_t span = static_cast<std::int64_t>(num_frames - 1) * interval + 1;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(num_frames));
    if (t_total >= span) {
        std::int64_t start = rng.uniform_int(0, t_total - span);
        for (int i = 0; i < num_frames; ++i) idx[static_cast<std::size_t>(i)] = start + static_cast<std::int64_t>(i) * interval;
    } else {
        std::int64_t start = rng.uniform_int(0, t_total - 1);
        for (int i = 0; i < num_frames; ++i)
            idx[static_cast<std::size_t>(i)] = (start + static_cast<std::int64_t>(i) * interval) % t_total;
    }
    return idx;
}

VideoTensor temporal_sample(const VideoTensor& video, int num_frames, int interval, Rng& rng) {
    check_video(video);
    auto idx = temporal_indices(video.t(), num_frames, interval, rng);
    std::int64_t frame_sz = video.h() * video.w() * video.c();
    VideoTensor out;
    out.frames = Tensor({static_cast<std::int64_t>(num_frames), video.h(), video.w(), video.c()});
    out.frame_interval = interval;
    out.source_id = video.source_id;
    const double* src = video.frames.data();
    double* dst = out.frames.data();
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(src + idx[i] * frame_sz, src + (idx[i] + 1) * frame_sz,
                  dst + static_cast<std::int64_t>(i) * frame_sz);
    return out;
}

FragmentGrid partition_and_sample(const VideoTensor& video, const GridSpec& grid, Rng& rng) {
    check_video(video);
    check(grid.grid_side >= 1 && grid.fragment_h >= 1 && grid.fragment_w >= 1,
          "grid spec dimensions must be positive");
    std::int64_t g = grid.grid_side, fh = grid.fragment_h, fw = grid.fragment_w;
    std::int64_t hh = video.h(), ww = video.w();
    check(hh >= g * fh && ww >= g * fw,
          "frame too small for the requested grid: every patch must fit a fragment");

    std::int64_t ph = hh / g, pw = ww / g;
    FragmentGrid fg;
    fg.grid = grid;
    fg.source_id = video.source_id;
    fg.fragments.reserve(static_cast<std::size_t>(g * g));
    fg.source_coords.reserve(static_cast<std::size_t>(g * g));

    std::int64_t t = video.t(), c = video.c();
    const double* src = video.frames.data();
    for (std::int64_t r = 0; r < g; ++r) {
        std::int64_t py = r * ph;
        std::int64_t cur_ph = r == g - 1 ? hh - py : ph;
        for (std::int64_t col = 0; col < g; ++col) {
            std::int64_t px = col * pw;
            std::int64_t cur_pw = col == g - 1 ? ww - px : pw;
            std::int64_t dy = rng.uniform_int(0, cur_ph - fh);
            std::int64_t dx = rng.uniform_int(0, cur_pw - fw);
            Coord origin{py + dy, px + dx};
            Tensor frag({t, fh, fw, c});
            double* dst = frag.data();
            for (std::int64_t ti = 0; ti < t; ++ti)
                for (std::int64_t y = 0; y < fh; ++y) {
                    const double* row =
                        src + ((ti * hh + origin.y + y) * ww + origin.x) * c;
                    std::copy(row, row + fw * c, dst + ((ti * fh + y) * fw) * c);
                }
            fg.fragments.push_back(std::move(frag));
            fg.source_coords.push_back(origin);
        }
    }
    return fg;
}

VideoTensor compose(const FragmentGrid& fg) {
    check(!fg.fragments.empty(), "empty fragment grid");
    std::int64_t g = fg.grid.grid_side, fh = fg.grid.fragment_h, fw = fg.grid.fragment_w;
    check(static_cast<std::int64_t>(fg.fragments.size()) == g * g,
          "fragment count does not match grid");
    std::int64_t t = fg.t(), c = fg.c();
    VideoTensor out;
    out.source_id = fg.source_id;
    out.frames = Tensor({t, g * fh, g * fw, c});
    double* dst = out.frames.data();
    std::int64_t oh = g * fh, ow = g * fw;
    for (std::int64_t r = 0; r < g; ++r)
        for (std::int64_t col = 0; col < g; ++col) {
            const Tensor& frag = fg.fragments[static_cast<std::size_t>(r * g + col)];
            check(frag.size(0) == t && frag.size(1) == fh && frag.size(2) == fw && frag.size(3) == c,
                  "inconsistent fragment shape");
            const double* src = frag.data();
            for (std::int64_t ti = 0; ti < t; ++ti)
                for (std::int64_t y = 0; y < fh; ++y) {
                    double* row = dst + ((ti * oh + r * fh + y) * ow + col * fw) * c;
                    std::copy(src + ((ti * fh + y) * fw) * c, src + ((ti * fh + y + 1) * fw) * c,
                              row);
                }
        }
    return out;
}

FragmentGrid decompose(const VideoTensor& composite, const GridSpec& grid) {
    std::int64_t g = grid.grid_side, fh = grid.fragment_h, fw = grid.fragment_w;
    check(composite.h() == g * fh && composite.w() == g * fw,
          "composite shape does not match grid");
    FragmentGrid fg;
    fg.grid = grid;
    fg.source_id = composite.source_id;
    std::int64_t t = composite.t(), c = composite.c();
    std::int64_t oh = composite.h(), ow = composite.w();
    const double* src = composite.frames.data();
    for (std::int64_t r = 0; r < g; ++r)
        for (std::int64_t col = 0; col < g; ++col) {
            Tensor frag({t, fh, fw, c});
            double* dst = frag.data();
            for (std::int64_t ti = 0; ti < t; ++ti)
                for (std::int64_t y = 0; y < fh; ++y) {
                    const double* row = src + ((ti * oh + r * fh + y) * ow + col * fw) * c;
                    std::copy(row, row + fw * c, dst + ((ti * fh + y) * fw) * c);
                }
            fg.fragments.push_back(std::move(frag));
            fg.source_coords.push_back(Coord{r * fh, col * fw});
        }
    return fg;
}

FragmentGrid gather_selected(const FragmentGrid& fg, const std::vector<std::int64_t>& selected) {
    check(!selected.empty(), "empty selection");
    std::int64_t k = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(selected.size()))));
    check(k * k == static_cast<std::int64_t>(selected.size()),
          "selection cardinality must be a perfect square");
    std::int64_t n = static_cast<std::int64_t>(fg.fragments.size());
    std::vector<std::int64_t> sorted(selected);
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        check(sorted[i] >= 0 && sorted[i] < n, "selection index out of range");
        check(i == 0 || sorted[i] != sorted[i - 1], "duplicate selection index");
    }
    // Row-major order of the original grid is the relative spatial order.
    FragmentGrid out;
    out.grid = GridSpec{static_cast<int>(k), fg.grid.fragment_h, fg.grid.fragment_w};
    out.source_id = fg.source_id;
    for (auto idx : sorted) {
        out.fragments.push_back(fg.fragments[static_cast<std::size_t>(idx)]);
        out.source_coords.push_back(fg.source_coords[static_cast<std::size_t>(idx)]);
    }
    return out;
}

}  // namespace fragvqa::fragments
