#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "wbmae/config.hpp"

using namespace wbmae;

TEST_CASE("key value parsing handles comments whitespace and blanks") {
    std::istringstream is("# leading comment\n"
                          "  d = 24   # trailing comment\n"
                          "\n"
                          "L=3\n"
                          "\t K\t=\t4 \n");
    auto kv = parse_key_values(is);
    REQUIRE(kv.size() == 3);
    REQUIRE(kv.at("d") == "24");
    REQUIRE(kv.at("L") == "3");
    REQUIRE(kv.at("K") == "4");
}

TEST_CASE("key value parsing rejects malformed lines") {
    {
        std::istringstream is("d 24\n");
        REQUIRE_THROWS_AS(parse_key_values(is), FormatError);
    }
    {
        std::istringstream is("= 24\n");
        REQUIRE_THROWS_AS(parse_key_values(is), FormatError);
    }
    {
        std::istringstream is("d =\n");
        REQUIRE_THROWS_AS(parse_key_values(is), FormatError);
    }
    {
        std::istringstream is("d = 1\nd = 2\n");
        REQUIRE_THROWS_AS(parse_key_values(is), FormatError);
    }
}

TEST_CASE("model configs round trip through key value form") {
    std::istringstream is("L = 3\n"
                          "d = 24\n"
                          "K = 4\n"
                          "N = 9\n"
                          "patch_h = 3\n"
                          "patch_w = 3\n"
                          "channels = 2\n"
                          "eta = 0.25\n"
                          "lambda = 0.1\n"
                          "head_classes = 5\n");
    ModelConfig cfg = model_config_from_kv(parse_key_values(is));
    REQUIRE(cfg.L == 3);
    REQUIRE(cfg.d == 24);
    REQUIRE(cfg.K == 4);
    REQUIRE(cfg.N == 9);
    REQUIRE(cfg.patch_h == 3);
    REQUIRE(cfg.patch_w == 3);
    REQUIRE(cfg.channels == 2);
    REQUIRE(cfg.eta == 0.25);
    REQUIRE(cfg.lambda == 0.1);
    REQUIRE(cfg.head_classes == 5);
    REQUIRE(cfg.p() == 6);
    REQUIRE(cfg.D() == 18);
}

TEST_CASE("unspecified keys keep the toy preset defaults") {
    std::istringstream is("L = 2\n");
    ModelConfig cfg = model_config_from_kv(parse_key_values(is));
    ModelConfig toy = toy_config();
    REQUIRE(cfg.L == 2);
    REQUIRE(cfg.d == toy.d);
    REQUIRE(cfg.N == toy.N);
    REQUIRE(cfg.eta == toy.eta);
}

TEST_CASE("unknown or malformed values are rejected") {
    auto parse = [](const char* text) {
        std::istringstream is(text);
        return model_config_from_kv(parse_key_values(is));
    };
    REQUIRE_THROWS_AS(parse("depth = 3\n"), FormatError);
    REQUIRE_THROWS_AS(parse("L = three\n"), FormatError);
    REQUIRE_THROWS_AS(parse("L = 3.5\n"), FormatError);
    REQUIRE_THROWS_AS(parse("eta = fast\n"), FormatError);
    REQUIRE_THROWS_AS(parse("eta = 0.1x\n"), FormatError);
    // valid syntax, invalid geometry: K does not divide d
    REQUIRE_THROWS_AS(parse("d = 10\nK = 3\n"), DimensionError);
    REQUIRE_THROWS_AS(load_model_config("/nonexistent/wbmae.cfg"), FormatError);
}
