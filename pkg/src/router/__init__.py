from src.router.lid import (
    DEFAULT_LANGUAGES,
    LidEmbedding,
    check_similarity,
    cosine_similarity_matrix,
    default_similarity,
    load_lid_embeddings,
    load_similarity,
    psd_factor,
    save_lid_embeddings,
    save_similarity,
    synth_lid_embeddings,
)
from src.router.router import DEFAULT_ROUTER_EPS, RouterParams, init_router, route, route_values
