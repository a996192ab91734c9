#include "doctest.h"

#include "ivgap/data.hpp"
#include "ivgap/synthlab.hpp"

using namespace ivgap;

namespace {

Schema yxzw() {
    return {{"y", ColumnType::numeric}, {"x", ColumnType::numeric}, {"z", ColumnType::numeric}, {"w", ColumnType::numeric}};
}

ModelConfig simple_config() {
    return ModelConfig::from_json(nlohmann::json::parse(R"({
        "outcome": "y", "treatment": "x", "instruments": ["z"],
        "covariates": [{"kind": "intercept"}, {"kind": "numeric", "column": "w"}]})"));
}

}  // namespace

TEST_CASE("csv read-back") {
    Dataset d = parse_csv("y,x,z,w\n1,2,3,4\n5,6,7,8\n9,10,11,12\n", yxzw());
    CHECK(d.n() == 3);
    CHECK(d.names().size() == 4);
    CHECK(d.numeric("w")[2] == 12);
}

TEST_CASE("rows with a missing value are dropped") {
    std::string text = "y,x,z,w\n";
    for (int i = 0; i < 10; ++i) text += (i == 4 ? std::string("") : std::to_string(i)) + ",1,2,3\n";
    Dataset d = parse_csv(text, yxzw());
    CHECK(d.n() == 9);
    CHECK(d.dropped() == 1);
    Dataset e = parse_csv("y,x,z,w\nNA,1,1,1\n1,nan,1,1\n2,2,2,2\n", yxzw());
    CHECK(e.n() == 1);
    CHECK(e.dropped() == 2);
}

TEST_CASE("csv errors are user errors") {
    CHECK_THROWS_AS(parse_csv("y,x,z\n1,2,3\n", yxzw()), UserError);
    CHECK_THROWS_AS(parse_csv("y,x,z,w\n1,2,3\n", yxzw()), UserError);
    CHECK_THROWS_AS(parse_csv("y,x,z,w\n1,abc,3,4\n", yxzw()), UserError);
    CHECK_THROWS_AS(parse_csv("y,x,z,w\n\"1,2,3,4\n", yxzw()), UserError);
    CHECK_THROWS_AS(parse_csv("", yxzw()), UserError);
    CHECK_THROWS_AS(load_csv("/nonexistent/file.csv", yxzw()), UserError);
}

TEST_CASE("quoted fields and CRLF") {
    Schema s{{"y", ColumnType::numeric}, {"g", ColumnType::categorical}};
    Dataset d = parse_csv("y,g\r\n1,\"a,b\"\r\n2,\"c\"\"d\"\r\n", s);
    CHECK(d.n() == 2);
    CHECK(d.text("g", 0) == "a,b");
    CHECK(d.text("g", 1) == "c\"d");
}

TEST_CASE("sample round-trips through csv") {
    Dataset s = sample(builtin_dgp("dgp_a"), 200000, 3);
    Schema sc{{"y", ColumnType::numeric}, {"x", ColumnType::numeric}, {"z", ColumnType::numeric}, {"d", ColumnType::numeric}};
    Dataset back = parse_csv(write_csv(s), sc);
    CHECK(back.n() == 200000);
    CHECK(back.numeric("y") == s.numeric("y"));
    CHECK(back.numeric("d") == s.numeric("d"));
}

TEST_CASE("categorical dummies drop the first level") {
    Schema s{{"g", ColumnType::categorical}};
    Dataset d = parse_csv("g\na\nb\nc\na\n", s);
    std::vector<TermSpec> terms{TermSpec::from_json({{"kind", "intercept"}}),
                                TermSpec::from_json({{"kind", "categorical"}, {"column", "g"}})};
    DesignMatrix m = expand_terms(d, terms);
    CHECK(m.values.cols() == 3);
    CHECK(m.values(1, 1) == 1.0);
    CHECK(m.values(2, 2) == 1.0);
    CHECK(m.values(3, 1) == 0.0);
}

TEST_CASE("numeric category labels sort numerically") {
    CategoricalColumn c = CategoricalColumn::from_labels({"10", "9", "2"});
    CHECK(c.levels == std::vector<std::string>{"2", "9", "10"});
}

TEST_CASE("piecewise-linear hinge arithmetic") {
    Schema s{{"age", ColumnType::numeric}};
    Dataset d = parse_csv("age\n40\n50\n", s);
    auto t = TermSpec::from_json({{"kind", "piecewise_linear"}, {"column", "age"}, {"knots", {35, 45}}});
    DesignMatrix m = expand_terms(d, {t}, false);
    // column 0 is the implicit intercept
    REQUIRE(m.values.cols() == 4);
    CHECK(m.values(0, 1) == 40);
    CHECK(m.values(0, 2) == 5);
    CHECK(m.values(0, 3) == 0);
    CHECK(m.values(1, 3) == 5);
}

TEST_CASE("interaction of a dummy and a numeric column") {
    Schema s{{"D", ColumnType::numeric}, {"X", ColumnType::numeric}};
    Dataset d = parse_csv("D,X\n1,2.5\n0,2.5\n", s);
    auto t = TermSpec::from_json({{"kind", "interaction"}, {"columns", {"D", "X"}}});
    DesignMatrix m = expand_terms(d, {t}, false);
    REQUIRE(m.values.cols() == 2);
    CHECK(m.values(0, 1) == 2.5);
    CHECK(m.values(1, 1) == 0.0);
}

TEST_CASE("rank-deficient covariates are reported by name") {
    Schema s{{"a", ColumnType::numeric}, {"b", ColumnType::numeric}};
    Dataset d = parse_csv("a,b\n1,2\n2,4\n3,6\n", s);
    std::vector<TermSpec> terms{TermSpec::from_json({{"kind", "intercept"}}),
                                TermSpec::from_json({{"kind", "numeric"}, {"column", "a"}}),
                                TermSpec::from_json({{"kind", "numeric"}, {"column", "b"}})};
    try {
        expand_terms(d, terms);
        FAIL("expected a rank error");
    } catch (const RankError& e) {
        CHECK(e.columns == std::vector<std::string>{"b"});
    }
}

TEST_CASE("frame defaults and weight validation") {
    Dataset s = sample(builtin_dgp("dgp_a"), 500, 1);
    ModelFrame f = build_frame(s, builtin_dgp("dgp_a").model_config());
    CHECK((f.weights.array() == 1.0).all());
    CHECK(f.W().cols() == 2);
    CHECK(f.mode == Mode::standard);

    Dataset b = sample(builtin_dgp("dgp_b"), 200, 1);
    ModelFrame fb = build_frame(b, builtin_dgp("dgp_b").model_config());
    CHECK(fb.W().cols() == 1);

    Schema sc{{"y", ColumnType::numeric}, {"x", ColumnType::numeric}, {"z", ColumnType::numeric},
              {"w", ColumnType::numeric}, {"wt", ColumnType::numeric}};
    Dataset zw = parse_csv("y,x,z,w,wt\n1,1,1,1,0\n2,2,1,0,0\n3,1,0,1,0\n4,0,1,0,0\n", sc);
    ModelConfig cfg = simple_config();
    cfg.weights = "wt";
    CHECK_THROWS_AS(build_frame(zw, cfg), UserError);
}

TEST_CASE("instrument constant within W cells forces did-rd") {
    DiscreteDgp c = builtin_dgp("dgp_c");
    Dataset s = sample(c, 3000, 2);
    ModelConfig cfg = c.model_config();
    cfg.mode = "standard";
    ModelFrame f = build_frame(s, cfg);
    CHECK(f.mode == Mode::did_rd);
    CHECK(f.modeCheck == "forced");
    cfg.mode = "did-rd";
    ModelFrame g = build_frame(s, cfg);
    CHECK(g.cellCheck == "verified");
    CHECK(g.modeCheck == "verified");
}

TEST_CASE("model configuration json round trip and errors") {
    ModelConfig c = simple_config();
    ModelConfig d = ModelConfig::from_json(c.to_json());
    CHECK(d.to_json() == c.to_json());
    CHECK_THROWS_AS(ModelConfig::from_json(nlohmann::json::parse(R"({"treatment": "x"})")), UserError);
    CHECK_THROWS_AS(ModelConfig::load("/nonexistent/model.json"), UserError);
}

TEST_CASE("partitions join labels across columns") {
    Schema s{{"a", ColumnType::categorical}, {"b", ColumnType::numeric}};
    Dataset d = parse_csv("a,b\nx,1\ny,2\nx,1\nx,2.5\n", s);
    Partition p = make_partition(d, {"a", "b"});
    CHECK(p.labels.size() == 3);
    CHECK(p.codes[0] == p.codes[2]);
    CHECK(p.labels[static_cast<std::size_t>(p.codes[3])] == "x|2.5");
}

TEST_CASE("clusters from labels") {
    ClusterIndex c = ClusterIndex::from_labels({"b", "a", "b", "c"});
    CHECK(c.count == 3);
    CHECK(c.codes[0] == c.codes[2]);
    CHECK(ClusterIndex::singletons(5).count == 5);
}
