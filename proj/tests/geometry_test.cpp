#include <gtest/gtest.h>

#include <set>

#include "layoutgen/geometry.hpp"

using namespace layoutgen;

namespace {

TEST(CellInBox, FullCoverBoxContainsEveryCell) {
    const GridGeometry geom{5, 7};
    const BoundingBox box{0, 0, 1, 1};
    for (int c = 0; c < geom.cells(); ++c) EXPECT_TRUE(cell_in_box(c, box, geom));
}

TEST(CellInBox, QuarterBoxOnFourByFour) {
    const GridGeometry geom{4, 4};
    const BoundingBox box{0, 0, 0.5, 0.5};
    std::set<int> inside;
    for (int c = 0; c < 16; ++c)
        if (cell_in_box(c, box, geom)) inside.insert(c);
    // enumerate all 16 centers: rows 0-1 x cols 0-1
    EXPECT_EQ(inside, (std::set<int>{0, 1, 4, 5}));
}

TEST(CellInBox, CenterOnFarEdgeIsOutside) {
    // cell (0,1) of a 4x4 grid has center x = 0.375; box with x1 = 0.375
    const GridGeometry geom{4, 4};
    const BoundingBox box{0.0, 0.0, 0.375, 1.0};
    EXPECT_TRUE(cell_in_box(geom.cell_at(0, 0), box, geom));
    EXPECT_FALSE(cell_in_box(geom.cell_at(0, 1), box, geom));
}

TEST(CellInBox, EdgeAdjacentBoxesNeverShareACell) {
    const GridGeometry geom{8, 8};
    const BoundingBox left{0.0, 0.0, 0.5, 1.0};
    const BoundingBox right{0.5, 0.0, 1.0, 1.0};
    for (int c = 0; c < geom.cells(); ++c)
        EXPECT_NE(cell_in_box(c, left, geom), cell_in_box(c, right, geom));
}

TEST(CellInBox, RejectsOutOfRangeCell) {
    const GridGeometry geom{4, 4};
    EXPECT_THROW(cell_in_box(16, BoundingBox{0, 0, 1, 1}, geom), std::runtime_error);
}

TEST(ContainingObjects, DuplicateBoxesReturnBothIndices) {
    const GridGeometry geom{4, 4};
    LayoutCondition layout;
    layout.objects.push_back({BoundingBox{0, 0, 0.5, 0.5}, {"red", "solid", "square"}});
    layout.objects.push_back({BoundingBox{0, 0, 0.5, 0.5}, {"blue", "solid", "disc"}});
    EXPECT_EQ(containing_objects(0, layout, geom), (std::vector<int>{0, 1}));
}

TEST(ContainingObjects, EmptyRegionGivesEmptySet) {
    const GridGeometry geom{4, 4};
    LayoutCondition layout;
    layout.objects.push_back({BoundingBox{0, 0, 0.25, 0.25}, {"red", "solid", "square"}});
    EXPECT_TRUE(containing_objects(15, layout, geom).empty());
}

// containing_objects vs per-object brute force on random layouts.
TEST(ContainingObjects, MatchesBruteForceOnRandomLayouts) {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = 2 + int(rng.uniform_int(9)), w = 2 + int(rng.uniform_int(9));
        const GridGeometry geom{h, w};
        LayoutCondition layout;
        const int k = 1 + int(rng.uniform_int(5));
        for (int i = 0; i < k; ++i) {
            double x0 = rng.uniform() * 0.9, y0 = rng.uniform() * 0.9;
            double x1 = x0 + 0.05 + rng.uniform() * (1.0 - x0 - 0.05);
            double y1 = y0 + 0.05 + rng.uniform() * (1.0 - y0 - 0.05);
            layout.objects.push_back(
                {BoundingBox{x0, y0, std::min(x1, 1.0), std::min(y1, 1.0)},
                 {"red", "solid", "square"}});
        }
        const bool disjoint = trial % 3 == 0;
        for (int c = 0; c < geom.cells(); ++c) {
            std::vector<int> expect;
            for (int i = 0; i < k; ++i)
                if (cell_in_box(c, layout.objects[size_t(i)].box, geom)) expect.push_back(i);
            EXPECT_EQ(containing_objects(c, layout, geom), expect);
            (void)disjoint;
        }
    }
}

TEST(ContainingObjects, DisjointBoxesClaimAtMostOneObjectPerCell) {
    const GridGeometry geom{6, 6};
    LayoutCondition layout;
    layout.objects.push_back({BoundingBox{0, 0, 0.5, 0.5}, {"red", "solid", "square"}});
    layout.objects.push_back({BoundingBox{0.5, 0.5, 1.0, 1.0}, {"blue", "solid", "disc"}});
    for (int c = 0; c < geom.cells(); ++c)
        EXPECT_LE(containing_objects(c, layout, geom).size(), 1u);
}

TEST(Validate, AcceptsWellFormedLayout) {
    LayoutCondition layout;
    layout.objects.push_back({BoundingBox{0.1, 0.1, 0.6, 0.9}, {"red", "solid", "square"}});
    EXPECT_TRUE(validate(layout, LayoutLimits{}).empty());
}

TEST(Validate, RejectsDegenerateAndOverBudget) {
    LayoutLimits limits{2, 3};
    LayoutCondition layout;
    layout.objects.push_back({BoundingBox{0.5, 0.1, 0.5, 0.9}, {"red", "solid", "square"}});
    auto v = validate(layout, limits);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_NE(v[0].find("box"), std::string::npos);

    layout.objects[0].box = BoundingBox{0.1, 0.1, 0.6, 0.9};
    layout.objects[0].description = {"a", "b", "c", "d"};
    v = validate(layout, limits);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_NE(v[0].find("description"), std::string::npos);

    layout.objects[0].description = {"red"};
    layout.objects.push_back(layout.objects[0]);
    layout.objects.push_back(layout.objects[0]);
    v = validate(layout, limits);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_NE(v[0].find("objects"), std::string::npos);

    EXPECT_THROW(validate_or_throw(layout, limits), std::runtime_error);
}

TEST(Validate, RejectsEmptyDescription) {
    LayoutCondition layout;
    layout.objects.push_back({BoundingBox{0.1, 0.1, 0.6, 0.9}, {}});
    EXPECT_FALSE(validate(layout, LayoutLimits{}).empty());
}

}  // namespace
