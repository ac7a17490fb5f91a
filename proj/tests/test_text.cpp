#include <doctest.h>

#include <cstdio>
#include <fstream>

#include <kdsm/text.hpp>

using namespace kdsm;

TEST_CASE("prompt template") {
    CHECK(build_prompt("giraffe body", "neck").rendered ==
          "The neck of a giraffe body in the photo.");
    CHECK(build_prompt("dog face", "nose").rendered ==
          "The nose of a dog face in the photo.");
    CHECK_THROWS_AS(build_prompt("", "nose"), ValidationError);
    CHECK_THROWS_AS(build_prompt("dog", ""), ValidationError);
    CHECK(placeholder_prompt() == "There is not the keypoint we are looking for.");
}

TEST_CASE("tokenize folds case and punctuation") {
    auto t = tokenize("The Left-Eye, of a Dog!");
    REQUIRE(t.size() == 6);
    CHECK(t[0] == "the");
    CHECK(t[1] == "left");
    CHECK(t[2] == "eye");
    CHECK(tokenize("Left Eye") == tokenize("left eye"));
}

TEST_CASE("synthetic encoder determinism and geometry") {
    const Eigen::VectorXd a = synthetic_encode("left eye", 64, 7);
    const Eigen::VectorXd b = synthetic_encode("left eye", 64, 7);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    CHECK(std::abs(a.norm() - 1.0) <= 1e-9);

    // shared-token construction: "left eye" is closer to "right eye" than
    // to "tail"
    const Eigen::VectorXd re = synthetic_encode("right eye", 64, 7);
    const Eigen::VectorXd tail = synthetic_encode("tail", 64, 7);
    CHECK(a.dot(re) > a.dot(tail));

    CHECK_THROWS_AS(synthetic_encode("x", 4, 0), ConfigError);

    // placeholder embedding is stable and distinct from category embeddings
    const Eigen::VectorXd ph1 = synthetic_encode(placeholder_prompt(), 64, 7);
    const Eigen::VectorXd ph2 = synthetic_encode(placeholder_prompt(), 64, 7);
    CHECK((ph1 - ph2).cwiseAbs().maxCoeff() == 0.0);
    for (const char* cat : {"left eye", "right eye", "nose", "tail base",
                            "chin", "forehead", "throat", "spine mid"}) {
        CHECK((ph1 - synthetic_encode(cat, 64, 7)).norm() > 1e-6);
    }
}

TEST_CASE("KEMB round trip and error paths") {
    EmbeddingTable t;
    t.dim = 8;
    t.normalized = true;
    // f32-representable values so the round trip is lossless
    Eigen::VectorXd v(8);
    v << 0.5, -0.25, 0.125, 0.5, 0.25, -0.5, 0.125, 0.25;
    t.entries["The nose of a dog face in the photo."] = v;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(8);
    w[3] = 1.0;
    t.entries["nose"] = w;

    const std::string path = "kemb_test.bin";
    save_table(t, path);
    EmbeddingTable r = load_table(path);
    CHECK(r.dim == 8);
    CHECK(r.normalized);
    REQUIRE(r.entries.size() == 2);
    CHECK((r.entries.at("nose") - w).cwiseAbs().maxCoeff() == 0.0);
    CHECK((r.entries.at("The nose of a dog face in the photo.") - v)
              .cwiseAbs()
              .maxCoeff() == 0.0);

    // unnormalized tables are renormalized on load
    EmbeddingTable un;
    un.dim = 8;
    un.normalized = false;
    un.entries["k"] = 4.0 * w;
    save_table(un, path);
    EmbeddingTable run = load_table(path);
    CHECK(std::abs(run.entries.at("k").norm() - 1.0) <= 1e-9);

    {
        std::ofstream os("kemb_bad.bin", std::ios::binary);
        os << "NOPExxxxxxxxxxxxxxxx";
    }
    CHECK_THROWS_WITH_AS(load_table("kemb_bad.bin"),
                         doctest::Contains("bad magic"), ParseError);

    {
        // truncate a valid file
        std::ifstream is(path, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(is)),
                        std::istreambuf_iterator<char>());
        std::ofstream os("kemb_trunc.bin", std::ios::binary);
        os.write(all.data(), static_cast<std::streamsize>(all.size() - 7));
    }
    CHECK_THROWS_AS(load_table("kemb_trunc.bin"), ParseError);

    std::remove(path.c_str());
    std::remove("kemb_bad.bin");
    std::remove("kemb_trunc.bin");
}

TEST_CASE("text source table/synthetic routing") {
    EmbeddingTable t;
    t.dim = 16;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(16);
    v[0] = 1.0;
    t.entries["hit"] = v;

    TextSource strict{16, 3, &t, false};
    CHECK(strict.encode("hit")[0] == 1.0);
    CHECK_THROWS_AS(strict.encode("miss"), LookupError);

    TextSource fallback{16, 3, &t, true};
    CHECK((fallback.encode("miss") - synthetic_encode("miss", 16, 3))
              .cwiseAbs()
              .maxCoeff() == 0.0);

    TextSource mismatch{32, 3, &t, false};
    CHECK_THROWS_AS(mismatch.encode("hit"), ConfigError);
}

TEST_CASE("embed_batch padding and order preservation") {
    TextSource src{32, 5, nullptr, false};
    std::vector<PromptSpec> prompts = {build_prompt("fox body", "nose"),
                                       build_prompt("fox body", "left eye"),
                                       build_prompt("fox body", "tail base")};
    PromptBatch b = embed_batch(prompts, src, 5);
    CHECK(b.K == 5);
    CHECK(b.K_valid == 3);
    const Eigen::VectorXd ph = synthetic_encode(placeholder_prompt(), 32, 5);
    for (int r = 3; r < 5; ++r)
        CHECK((b.raw.mat2d().row(r).transpose() - ph).cwiseAbs().maxCoeff() == 0.0);

    PromptBatch empty = embed_batch({}, src, 4);
    CHECK(empty.K_valid == 0);
    for (int r = 0; r < 4; ++r)
        CHECK((empty.raw.mat2d().row(r).transpose() - ph).cwiseAbs().maxCoeff() == 0.0);

    // permuting prompts permutes the first K_valid rows identically
    std::vector<PromptSpec> perm = {prompts[2], prompts[0], prompts[1]};
    PromptBatch pb = embed_batch(perm, src, 5);
    const int map[3] = {2, 0, 1};
    for (int i = 0; i < 3; ++i)
        CHECK((pb.raw.mat2d().row(i) - b.raw.mat2d().row(map[i]))
                  .cwiseAbs()
                  .maxCoeff() == 0.0);

    std::vector<PromptSpec> many(6, prompts[0]);
    CHECK_THROWS_AS(embed_batch(many, src, 5), CapacityError);
}
