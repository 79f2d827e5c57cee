#pragma once

#include <string>
#include <vector>

#include "fragvqa/rng.hpp"
#include "fragvqa/tensor.hpp"

namespace fragvqa::fragments {

struct VideoTensor {
    Tensor frames;  // T x H x W x C
    int frame_interval = 1;
    std::string source_id;

    std::int64_t t() const { return frames.size(0); }
    std::int64_t h() const { return frames.size(1); }
    std::int64_t w() const { return frames.size(2); }
    std::int64_t c() const { return frames.size(3); }
};

struct GridSpec {
    int grid_side = 1;     // sqrt(N)
    int fragment_h = 1;
    int fragment_w = 1;
    int patches() const { return grid_side * grid_side; }
};

struct Coord {
    std::int64_t y = 0;
    std::int64_t x = 0;
};

// One sampled fragment per patch, row-major over the patch grid. Offsets are
// absolute frame coordinates; one offset per fragment, shared by all frames.
struct FragmentGrid {
    std::vector<Tensor> fragments;   // each T x h x w x C
    std::vector<Coord> source_coords;
    GridSpec grid;
    std::string source_id;

    std::int64_t t() const { return fragments.empty() ? 0 : fragments[0].size(0); }
    std::int64_t c() const { return fragments.empty() ? 0 : fragments[0].size(3); }
};

// The index set produced for (t_total, num_frames, interval); exposed so tests
// can replay the draw. Starts are uniform over valid positions when the video
// is long enough; shorter videos wrap modulo t_total from a uniform start.
std::vector<std::int64_t> temporal_indices(std::int64_t t_total, int num_frames, int interval,
                                           Rng& rng);

VideoTensor temporal_sample(const VideoTensor& video, int num_frames, int interval, Rng& rng);

// Splits each frame into grid_side^2 patches (floor sizes, remainder absorbed
// by the last row/column) and samples one fragment per patch, uniform over
// valid in-patch positions. Draw order: patches row-major, dy before dx.
FragmentGrid partition_and_sample(const VideoTensor& video, const GridSpec& grid, Rng& rng);

VideoTensor compose(const FragmentGrid& fg);

// Blockwise inverse of compose; source_coords are block coordinates.
FragmentGrid decompose(const VideoTensor& composite, const GridSpec& grid);

// Keeps the selected patches in their original relative order and re-packs
// them into a square sub-grid. Cardinality must be a perfect square.
FragmentGrid gather_selected(const FragmentGrid& fg, const std::vector<std::int64_t>& selected);

}  // namespace fragvqa::fragments
