#include "reftok/synth.hpp"

#include <algorithm>
#include <cmath>

namespace reftok {

namespace {

constexpr double kTwoPi = 6.283185307179586;

// A small 5x7 font, rows concatenated top to bottom; '1' = foreground.
const char* letter_bitmap(int which) {
    static const char* font[] = {
        "11111" "10000" "10000" "11110" "10000" "10000" "11111",  // E
        "11111" "10000" "10000" "11110" "10000" "10000" "10000",  // F
        "10001" "10001" "10001" "11111" "10001" "10001" "10001",  // H
        "10000" "10000" "10000" "10000" "10000" "10000" "11111",  // L
        "11111" "00100" "00100" "00100" "00100" "00100" "00100",  // T
        "10001" "11011" "10101" "10101" "10001" "10001" "10001",  // M
        "01110" "10001" "10000" "10000" "10000" "10001" "01110",  // C
        "01110" "10001" "10001" "10001" "10001" "10001" "01110",  // O
    };
    return font[which % 8];
}

struct Tone {
    float r, g, b;
};

Tone random_tone(Rng& rng) {
    return Tone{static_cast<float>(0.05 + 0.9 * uniform01(rng)),
                static_cast<float>(0.05 + 0.9 * uniform01(rng)),
                static_cast<float>(0.05 + 0.9 * uniform01(rng))};
}

double tone_dist(const Tone& a, const Tone& b) {
    return std::abs(a.r - b.r) + std::abs(a.g - b.g) + std::abs(a.b - b.b);
}

struct Glyph {
    int kind = 0;  // 0 checker, 1 stripes, 2 letter
    int size = 0;
    int cell = 2;
    int orient = 0;  // stripes: 0 horizontal, 1 vertical, 2 diagonal
    int letter = 0;
    Tone fg, bg;
    int home_x = 0, home_y = 0;
    double amp_x = 0, amp_y = 0, freq_x = 0, freq_y = 0, phase_x = 0, phase_y = 0;

    int dx(int frame) const { return static_cast<int>(std::lround(amp_x * std::sin(kTwoPi * freq_x * frame + phase_x))); }
    int dy(int frame) const { return static_cast<int>(std::lround(amp_y * std::sin(kTwoPi * freq_y * frame + phase_y))); }

    // Two-tone texture value at local texel (u,v).
    Tone texel(int u, int v) const {
        bool on = false;
        switch (kind) {
            case 0: on = ((u / cell) + (v / cell)) % 2 == 0; break;
            case 1:
                if (orient == 0) on = (v / cell) % 2 == 0;
                else if (orient == 1) on = (u / cell) % 2 == 0;
                else on = ((u + v) / cell) % 2 == 0;
                break;
            default: {
                int fx = u * 5 / size;
                int fy = v * 7 / size;
                on = letter_bitmap(letter)[fy * 5 + fx] == '1';
            }
        }
        return on ? fg : bg;
    }
};

std::vector<Glyph> make_glyphs(Rng& rng, const SynthConfig& cfg) {
    int margin = static_cast<int>(std::ceil(cfg.motion_amplitude)) + 1;
    if (cfg.glyph_size + 2 * margin > std::min(cfg.height, cfg.width))
        throw DataError("glyph (plus motion margin) larger than frame");
    std::vector<Glyph> out;
    for (int i = 0; i < cfg.glyphs; ++i) {
        Glyph g;
        g.kind = uniform_int(rng, 0, 2);
        g.size = cfg.glyph_size;
        g.cell = uniform_int(rng, 2, 3);
        g.orient = uniform_int(rng, 0, 2);
        g.letter = uniform_int(rng, 0, 7);
        g.fg = random_tone(rng);
        do {
            g.bg = random_tone(rng);
        } while (tone_dist(g.fg, g.bg) < 0.5);
        g.home_x = uniform_int(rng, margin, cfg.width - cfg.glyph_size - margin);
        g.home_y = uniform_int(rng, margin, cfg.height - cfg.glyph_size - margin);
        g.amp_x = cfg.motion_amplitude * (0.5 + 0.5 * uniform01(rng));
        g.amp_y = cfg.motion_amplitude * (0.5 + 0.5 * uniform01(rng));
        g.freq_x = 0.02 + 0.04 * uniform01(rng);
        g.freq_y = 0.02 + 0.04 * uniform01(rng);
        g.phase_x = kTwoPi * uniform01(rng);
        g.phase_y = kTwoPi * uniform01(rng);
        out.push_back(g);
    }
    return out;
}

}  // namespace

Rect bounding_union(const std::vector<Rect>& rs) {
    if (rs.empty()) return {};
    int x0 = rs[0].x, y0 = rs[0].y, x1 = rs[0].x + rs[0].w, y1 = rs[0].y + rs[0].h;
    for (const Rect& r : rs) {
        x0 = std::min(x0, r.x);
        y0 = std::min(y0, r.y);
        x1 = std::max(x1, r.x + r.w);
        y1 = std::max(y1, r.y + r.h);
    }
    return Rect{x0, y0, x1 - x0, y1 - y0};
}

SynthTraceClip synth_with_trace(std::uint64_t seed, const SynthConfig& cfg) {
    if (cfg.frames < 1 || cfg.height < 8 || cfg.width < 8) throw DataError("degenerate synth config");
    Rng rng(seed);
    std::vector<Glyph> glyphs = make_glyphs(rng, cfg);

    SynthTraceClip out;
    out.clip = VideoClip(cfg.frames, cfg.height, cfg.width, 3);
    out.clip.source_id = "synth:" + std::to_string(seed);
    out.glyphs.resize(glyphs.size());

    // static background: bilinear blend of four corner tones
    Tone c00 = random_tone(rng), c01 = random_tone(rng), c10 = random_tone(rng), c11 = random_tone(rng);
    std::vector<float> background(static_cast<std::size_t>(cfg.height) * cfg.width * 3);
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
            float fy = cfg.height > 1 ? static_cast<float>(y) / (cfg.height - 1) : 0.f;
            float fx = cfg.width > 1 ? static_cast<float>(x) / (cfg.width - 1) : 0.f;
            float* px = &background[(static_cast<std::size_t>(y) * cfg.width + x) * 3];
            px[0] = (1 - fy) * ((1 - fx) * c00.r + fx * c01.r) + fy * ((1 - fx) * c10.r + fx * c11.r);
            px[1] = (1 - fy) * ((1 - fx) * c00.g + fx * c01.g) + fy * ((1 - fx) * c10.g + fx * c11.g);
            px[2] = (1 - fy) * ((1 - fx) * c00.b + fx * c01.b) + fy * ((1 - fx) * c10.b + fx * c11.b);
        }

    for (int f = 0; f < cfg.frames; ++f) {
        std::copy(background.begin(), background.end(), out.clip.frame(f));
        for (std::size_t gi = 0; gi < glyphs.size(); ++gi) {
            const Glyph& g = glyphs[gi];
            int gx = g.home_x + g.dx(f);
            int gy = g.home_y + g.dy(f);
            out.glyphs[gi].rects.push_back(Rect{gx, gy, g.size, g.size});
            for (int v = 0; v < g.size; ++v)
                for (int u = 0; u < g.size; ++u) {
                    int px = gx + u, py = gy + v;
                    if (px < 0 || px >= cfg.width || py < 0 || py >= cfg.height) continue;
                    Tone t = g.texel(u, v);
                    out.clip.at(f, py, px, 0) = t.r;
                    out.clip.at(f, py, px, 1) = t.g;
                    out.clip.at(f, py, px, 2) = t.b;
                }
        }
    }
    return out;
}

VideoClip synth_redundant_clip(std::uint64_t seed, const SynthConfig& cfg) {
    return synth_with_trace(seed, cfg).clip;
}

void recolor_region(VideoClip& clip, int frame, const Rect& rect) {
    for (int y = std::max(0, rect.y); y < std::min(clip.h, rect.y + rect.h); ++y)
        for (int x = std::max(0, rect.x); x < std::min(clip.w, rect.x + rect.w); ++x) {
            float r = clip.at(frame, y, x, 0);
            float g = clip.at(frame, y, x, 1);
            float b = clip.at(frame, y, x, 2);
            clip.at(frame, y, x, 0) = b;
            clip.at(frame, y, x, 1) = r;
            clip.at(frame, y, x, 2) = g;
        }
}

}  // namespace reftok
