#include <doctest.h>

#include <cmath>

#include "tensorpoly/oracle_suite.hpp"
#include "tensorpoly/tensor_ops.hpp"

using namespace tensorpoly;

TEST_CASE("min_base picks the least base whose power covers d") {
    CHECK(min_base(625, 4) == 5);
    CHECK(min_base(512, 3) == 8);
    CHECK(min_base(7, 1) == 7);
    CHECK(min_base(1, 3) == 1);
    CHECK(min_base(2048, 2) == 46);

    // (q-1)^n < d <= q^n on random inputs.
    Rng rng(11);
    for (int it = 0; it < 200; ++it) {
        const int64_t d = rng.uniform_int(1, 100000);
        const int n = rng.uniform_int(1, 6);
        const int q = min_base(d, n);
        CHECK(ipow_sat(q, n) >= static_cast<uint64_t>(d));
        if (q > 1) CHECK(ipow_sat(q - 1, n) < static_cast<uint64_t>(d));
    }
    CHECK_THROWS_AS(min_base(0, 2), InvalidArgument);
    CHECK_THROWS_AS(min_base(5, 0), InvalidArgument);
}

TEST_CASE("simple_tensor is the kron product, first factor most significant") {
    CHECK(simple_tensor({{1, 2}, {3, 4}}) == Vector{3, 4, 6, 8});
    CHECK(simple_tensor({{7.5}}) == Vector{7.5});

    const Vector v = simple_tensor({{1, 0}, {2, 3}, {4, 5}});
    CHECK(v == Vector{8, 10, 12, 15, 0, 0, 0, 0});

    CHECK_THROWS_AS(simple_tensor({}), InvalidArgument);

    // Length multiplies.
    Rng rng(3);
    for (int it = 0; it < 20; ++it) {
        std::vector<Vector> factors(rng.uniform_int(1, 4));
        size_t want = 1;
        for (Vector& f : factors) {
            f.resize(rng.uniform_int(1, 4));
            for (double& x : f) x = rng.uniform(-1, 1);
            want *= f.size();
        }
        CHECK(simple_tensor(factors).size() == want);
    }
}

TEST_CASE("entangled_reconstruct sums simple tensors and truncates") {
    SUBCASE("order-1 rank-1 is the identity") {
        FactorVectorSet fs(1, 1, 3, 3);
        fs.at(0, 0, 0) = 5;
        fs.at(0, 0, 1) = -2;
        fs.at(0, 0, 2) = 0;
        CHECK(entangled_reconstruct(fs) == Vector{5, -2, 0});
    }
    SUBCASE("sum of axis-aligned simple tensors") {
        FactorVectorSet fs(2, 2, 2, 4);
        fs.at(0, 0, 0) = 1;  // e1 (x) e1
        fs.at(0, 1, 0) = 1;
        fs.at(1, 0, 1) = 1;  // e2 (x) e2
        fs.at(1, 1, 1) = 1;
        CHECK(entangled_reconstruct(fs) == Vector{1, 0, 0, 1});
    }
    SUBCASE("matches the brute-force oracle on random integers, d=7") {
        Rng rng(17);
        for (int it = 0; it < 50; ++it) {
            FactorVectorSet fs(2, 3, 2, 7);
            for (double& x : fs.data) x = rng.uniform_int(-3, 3);
            CHECK(entangled_reconstruct(fs) == oracle::ref_entangled(fs));
        }
    }
    SUBCASE("no truncation when target_dim is the full power") {
        Rng rng(5);
        FactorVectorSet fs(3, 2, 3, 9);
        for (double& x : fs.data) x = rng.uniform(-1, 1);
        const Vector got = entangled_reconstruct(fs);
        CHECK(got.size() == 9);
        CHECK(got == oracle::ref_entangled(fs));
    }
}

TEST_CASE("entangled_reconstruct is multilinear per rank") {
    Rng rng(23);
    FactorVectorSet fs(3, 2, 2, 4);
    for (double& x : fs.data) x = rng.uniform(-1, 1);

    auto rank_contribution = [&](const FactorVectorSet& set, int rank) {
        FactorVectorSet solo(1, set.order, set.q, set.target_dim);
        for (int i = 0; i < set.order; ++i) {
            for (int t = 0; t < set.q; ++t) solo.at(0, i, t) = set.at(rank, i, t);
        }
        return entangled_reconstruct(solo);
    };

    const double c = 2.5;
    FactorVectorSet scaled = fs;
    for (int t = 0; t < fs.q; ++t) scaled.at(1, 0, t) *= c;

    for (int rank = 0; rank < 3; ++rank) {
        const Vector before = rank_contribution(fs, rank);
        const Vector after = rank_contribution(scaled, rank);
        for (size_t p = 0; p < before.size(); ++p) {
            const double want = (rank == 1) ? c * before[p] : before[p];
            CHECK(after[p] == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("tt_contract") {
    SUBCASE("single core reshapes to a matrix") {
        TensorTrainCores tt = TensorTrainCores::make(1, 3, 2, 5);
        Rng rng(2);
        for (double& x : tt.cores[0].data) x = rng.uniform_int(-3, 3);
        const Matrix m = tt_contract(tt);
        REQUIRE(m.rows == 3);
        REQUIRE(m.cols == 2);
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 2; ++b) CHECK(m(a, b) == tt.cores[0].at(0, a, 0, b));
        }
    }
    SUBCASE("rank-1 chain is a kron product of the reshaped cores") {
        Rng rng(31);
        TensorTrainCores tt = TensorTrainCores::make(2, 2, 2, 1);
        for (Tensor4& c : tt.cores)
            for (double& x : c.data) x = rng.uniform_int(-3, 3);
        const Matrix m = tt_contract(tt);
        for (int a1 = 0; a1 < 2; ++a1)
            for (int a2 = 0; a2 < 2; ++a2)
                for (int b1 = 0; b1 < 2; ++b1)
                    for (int b2 = 0; b2 < 2; ++b2)
                        CHECK(m(a1 * 2 + a2, b1 * 2 + b2) ==
                              tt.cores[0].at(0, a1, 0, b1) * tt.cores[1].at(0, a2, 0, b2));
    }
    SUBCASE("N=3 matches the brute-force bond sum exactly on integers") {
        Rng rng(37);
        for (int it = 0; it < 30; ++it) {
            TensorTrainCores tt = TensorTrainCores::make(3, 2, 2, 2);
            for (Tensor4& c : tt.cores)
                for (double& x : c.data) x = rng.uniform_int(-3, 3);
            CHECK(tt_contract(tt).data == oracle::ref_tt(tt, nullptr).data);
        }
    }
    SUBCASE("broken bond chain is rejected") {
        TensorTrainCores tt = TensorTrainCores::make(3, 2, 2, 2);
        tt.cores[1] = Tensor4(2, 2, 3, 2);  // right bond 3 vs expected 2
        CHECK_THROWS_AS(tt_contract(tt), InvalidArgument);
    }
}

TEST_CASE("tt_contract_weighted") {
    Rng rng(41);
    TensorTrainCores tt = TensorTrainCores::make(3, 2, 2, 2);
    for (Tensor4& c : tt.cores)
        for (double& x : c.data) x = rng.uniform(-1, 1);

    SUBCASE("all-ones weights reproduce the plain contraction") {
        Matrix ones(2, 2, 1.0);
        CHECK(tt_contract_weighted(tt, ones).data == tt_contract(tt).data);
    }
    SUBCASE("one-hot weights select a single bond path") {
        Matrix sel(2, 2, 0.0);
        sel(0, 1) = 1.0;
        sel(1, 0) = 1.0;
        const Matrix got = tt_contract_weighted(tt, sel);
        TensorTrainCores sliced = TensorTrainCores::make(3, 2, 2, 1);
        for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
                sliced.cores[0].at(0, a, 0, b) = tt.cores[0].at(0, a, 1, b);
                sliced.cores[1].at(0, a, 0, b) = tt.cores[1].at(1, a, 0, b);
                sliced.cores[2].at(0, a, 0, b) = tt.cores[2].at(0, a, 0, b);
            }
        }
        CHECK(got.data == tt_contract(sliced).data);
    }
    SUBCASE("random weights match the brute-force weighted sum") {
        for (int it = 0; it < 30; ++it) {
            Matrix alpha(2, 2);
            for (double& x : alpha.data) x = rng.uniform(0, 1);
            const Matrix got = tt_contract_weighted(tt, alpha);
            const Matrix want = oracle::ref_tt(tt, &alpha);
            for (size_t i = 0; i < got.data.size(); ++i)
                CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
        }
    }
    SUBCASE("weight shape mismatch is rejected") {
        Matrix bad(1, 2, 1.0);
        CHECK_THROWS_AS(tt_contract_weighted(tt, bad), InvalidArgument);
    }
}

TEST_CASE("tensor dims derive the minimal base per side") {
    const TensorDims dims = TensorDims::make(512, 625, 3, 4, 2);
    CHECK(dims.q_in == 5);   // 5^4 = 625 >= 512
    CHECK(dims.q_out == 5);  // 625 exactly
    CHECK_THROWS_AS(TensorDims::make(0, 4, 1, 1, 1), InvalidArgument);

    FactorVectorSet bad(1, 2, 3, 16);  // min_base(16,2)=4, not 3
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("operations are deterministic pure functions") {
    Rng rng(43);
    FactorVectorSet fs(2, 3, 2, 7);
    for (double& x : fs.data) x = rng.uniform(-1, 1);
    const Vector a = entangled_reconstruct(fs);
    const Vector b = entangled_reconstruct(fs);
    CHECK(a == b);
}
