from src.toymodel.chunking import attention_mask, chunk_split
from src.toymodel.config import ALL_ADAPTED, BLOCK_LAYERS, ModelConfig
from src.toymodel.model import ToyModel
