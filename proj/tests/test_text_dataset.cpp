#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "freetuner/dataset.hpp"
#include "freetuner/errors.hpp"
#include "freetuner/image.hpp"
#include "freetuner/text.hpp"

#include <set>

using ft::Shape;
using ft::Tensor;

namespace {
// Token table with recognizable rows: row v = [v, v+0.5, v+0.25, ...].
Tensor toy_table(int d = 4) {
    const int V = static_cast<int>(ft::vocabulary().size());
    std::vector<double> v(static_cast<std::size_t>(V) * d);
    for (int r = 0; r < V; ++r)
        for (int c = 0; c < d; ++c) v[static_cast<std::size_t>(r) * d + c] = r + c * 0.25;
    return Tensor(Shape{V, d}, std::move(v));
}
}  // namespace

TEST_CASE("tokenize_ids") {
    SUBCASE("standard prompt") {
        auto ids = ft::tokenize_ids("a photo of a red circle");
        REQUIRE(ids.size() == 7);
        CHECK(ids[0] == 0);
        CHECK(ids[1] == ft::token_id("a"));
        CHECK(ids[2] == ft::token_id("photo"));
        CHECK(ids[3] == ft::token_id("of"));
        CHECK(ids[4] == ft::token_id("a"));
        CHECK(ids[5] == ft::token_id("red"));
        CHECK(ids[6] == ft::token_id("circle"));
    }
    SUBCASE("empty prompt is just the start token") {
        auto ids = ft::tokenize_ids("");
        REQUIRE(ids.size() == 1);
        CHECK(ids[0] == 0);
    }
    SUBCASE("unknown word names the offender") {
        try {
            ft::tokenize_ids("a photo of zebra");
            FAIL("expected UnknownTokenError");
        } catch (const ft::UnknownTokenError& e) {
            CHECK(e.word == "zebra");
        }
    }
    SUBCASE("token budget") {
        CHECK_NOTHROW(ft::tokenize_ids("a a a a a a a a a a a"));   // 11 words + start = 12
        CHECK_THROWS_AS(ft::tokenize_ids("a a a a a a a a a a a a"), std::invalid_argument);
    }
    SUBCASE("full template fits") {
        auto ids = ft::tokenize_ids("a photo of a red circle with stripes background");
        CHECK(ids.size() == 10);
    }
}

TEST_CASE("vocabulary") {
    const auto& vocab = ft::vocabulary();
    CHECK(vocab[0] == "<start>");
    std::set<std::string> uniq(vocab.begin(), vocab.end());
    CHECK(uniq.size() == vocab.size());
    for (std::size_t i = 0; i < vocab.size(); ++i) CHECK(ft::token_id(vocab[i]) == static_cast<int>(i));
    CHECK_THROWS_AS(ft::token_id("zebra"), ft::UnknownTokenError);
}

TEST_CASE("tokenize builds embeddings from table rows") {
    Tensor table = toy_table();
    const int d = table.dim(1);

    SUBCASE("rows are gathered in token order") {
        auto p = ft::tokenize("a photo of a red circle", table);
        REQUIRE(p.length() == 7);
        CHECK(p.embeddings.shape() == Shape{7, d});
        for (int i = 0; i < p.length(); ++i)
            for (int c = 0; c < d; ++c)
                CHECK(p.embeddings.at(static_cast<std::size_t>(i) * d + c) ==
                      table.at(static_cast<std::size_t>(p.tokens[static_cast<std::size_t>(i)]) * d + c));
    }
    SUBCASE("word_index_map points at every occurrence") {
        auto p = ft::tokenize("a photo of a red circle", table);
        REQUIRE(p.word_index_map.count("a") == 1);
        CHECK(p.word_index_map.at("a") == std::vector<int>{1, 4});
        CHECK(p.word_index_map.at("circle") == std::vector<int>{6});
        CHECK(p.word_index_map.count("<start>") == 0);
    }
    SUBCASE("null prompt") {
        auto p = ft::tokenize("", table);
        CHECK(p.is_null());
        CHECK(p.length() == 1);
        CHECK(p.embeddings.shape() == Shape{1, d});
        CHECK(p.word_index_map.empty());
    }
    SUBCASE("table validation") {
        CHECK_THROWS_AS(ft::tokenize("a", Tensor(Shape{3, 4}, 0.0)), std::invalid_argument);
    }
    SUBCASE("gathered rows stay differentiable") {
        ft::Tape tape;
        Tensor t = tape.leaf(table);
        auto p = ft::tokenize("a photo", t);
        ft::Tensor loss = ft::sum(p.embeddings);
        tape.backward(loss);
        auto g = tape.grad(t);
        // "a" row (id 1) and "photo" row (id 2) and start row each get 1 per column.
        for (int c = 0; c < t.dim(1); ++c) {
            CHECK(g.at(static_cast<std::size_t>(0) * t.dim(1) + c) == 1.0);
            CHECK(g.at(static_cast<std::size_t>(ft::token_id("a")) * t.dim(1) + c) == 1.0);
            CHECK(g.at(static_cast<std::size_t>(ft::token_id("photo")) * t.dim(1) + c) == 1.0);
            CHECK(g.at(static_cast<std::size_t>(ft::token_id("red")) * t.dim(1) + c) == 0.0);
        }
    }
}

TEST_CASE("toy dataset") {
    ft::ToyDataset ds;
    REQUIRE(ds.image_size() == 32);

    SUBCASE("sample is deterministic") {
        auto a = ds.sample(99), b = ds.sample(99);
        CHECK(a.prompt == b.prompt);
        CHECK(a.color == b.color);
        CHECK(a.shape == b.shape);
        CHECK(a.texture == b.texture);
        REQUIRE(a.image.numel() == b.image.numel());
        for (std::size_t i = 0; i < a.image.numel(); ++i) CHECK(a.image.at(i) == b.image.at(i));
        for (std::size_t i = 0; i < a.mask.numel(); ++i) CHECK(a.mask.at(i) == b.mask.at(i));
    }
    SUBCASE("different seeds differ") {
        auto a = ds.sample(1), b = ds.sample(2);
        bool any = false;
        for (std::size_t i = 0; i < a.image.numel() && !any; ++i) any = a.image.at(i) != b.image.at(i);
        CHECK(any);
    }
    SUBCASE("image and mask are well formed") {
        for (std::uint64_t seed : {3ull, 14ull, 159ull, 2653ull}) {
            auto s = ds.sample(seed);
            CHECK(s.image.shape() == Shape{3, 32, 32});
            CHECK(s.mask.shape() == Shape{32, 32});
            double area = 0.0;
            for (std::size_t i = 0; i < s.mask.numel(); ++i) {
                const double m = s.mask.at(i);
                CHECK((m == 0.0 || m == 1.0));
                area += m;
            }
            CHECK(area >= 8.0);            // smallest star core still covers a few cells
            CHECK(area <= 0.6 * 32 * 32);  // subject never swallows the frame
            for (std::size_t i = 0; i < s.image.numel(); ++i) {
                const double v = s.image.at(i);
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                CHECK(v * ft::kPixelGrid == std::round(v * ft::kPixelGrid));
            }
        }
    }
    SUBCASE("mask marks exactly the colored pixels") {
        auto s = ds.render("red", "circle", "plain", 7);
        const double fr = ft::quantize_unit(0.90), fg = ft::quantize_unit(0.12), fb = ft::quantize_unit(0.12);
        const std::size_t plane = 32 * 32;
        for (std::size_t i = 0; i < plane; ++i) {
            if (s.mask.at(i) == 1.0) {
                CHECK(s.image.at(i) == fr);
                CHECK(s.image.at(plane + i) == fg);
                CHECK(s.image.at(2 * plane + i) == fb);
            } else {
                // Backgrounds are grayscale.
                CHECK(s.image.at(i) == s.image.at(plane + i));
                CHECK(s.image.at(i) == s.image.at(2 * plane + i));
            }
        }
    }
    SUBCASE("prompt template") {
        CHECK(ds.render("red", "circle", "", 1).prompt == "a photo of a red circle");
        CHECK(ds.render("blue", "star", "checker", 1).prompt ==
              "a photo of a blue star with checker background");
    }
    SUBCASE("every reachable prompt tokenizes within budget") {
        for (const char* color : {"red", "green", "blue", "yellow"})
            for (const char* shape : {"circle", "square", "triangle", "star"})
                for (const char* texture : {"", "plain", "stripes", "checker", "dots"}) {
                    auto s = ds.render(color, shape, texture, 42);
                    CHECK_NOTHROW(ft::tokenize_ids(s.prompt));
                }
    }
    SUBCASE("sample emits both prompt forms") {
        bool with = false, without = false;
        for (std::uint64_t seed = 0; seed < 64 && !(with && without); ++seed) {
            auto s = ds.sample(seed);
            (s.texture.empty() ? without : with) = true;
        }
        CHECK(with);
        CHECK(without);
    }
    SUBCASE("textures change the background, not the subject") {
        auto plain = ds.render("green", "square", "plain", 11);
        auto stripes = ds.render("green", "square", "stripes", 11);
        auto checker = ds.render("green", "square", "checker", 11);
        auto dots = ds.render("green", "square", "dots", 11);
        // Same seed, same geometry: identical masks.
        for (std::size_t i = 0; i < plain.mask.numel(); ++i) {
            CHECK(plain.mask.at(i) == stripes.mask.at(i));
            CHECK(plain.mask.at(i) == checker.mask.at(i));
            CHECK(plain.mask.at(i) == dots.mask.at(i));
        }
        auto differs = [](const ft::ToySample& a, const ft::ToySample& b) {
            for (std::size_t i = 0; i < a.image.numel(); ++i)
                if (a.image.at(i) != b.image.at(i)) return true;
            return false;
        };
        CHECK(differs(plain, stripes));
        CHECK(differs(plain, checker));
        CHECK(differs(plain, dots));
        CHECK(differs(stripes, checker));
    }
    SUBCASE("odd or small sizes are rejected") {
        CHECK_THROWS_AS(ft::ToyDataset(31), std::invalid_argument);
        CHECK_THROWS_AS(ft::ToyDataset(8), std::invalid_argument);
    }
}
