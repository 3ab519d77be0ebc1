/**
 * Tracks on-hand stock per SKU.
 */
public class Inventory {
    private java.util.Map stock = new java.util.HashMap();

    public void addStock(String sku, int amount) {
        int current = stockOf(sku);
        stock.put(sku, new Integer(current + amount));
    }

    /** Removes stock; the level must never drop below zero. */
    public void removeStock(String sku, int amount) {
        int current = stockOf(sku);
        int next = current - amount;
        stock.put(sku, new Integer(next));
    }

    public int stockOf(String sku) {
        Object level = stock.get(sku);
        if (level == null) {
            return 0;
        }
        return ((Integer) level).intValue();
    }

    public boolean isAvailable(String sku, int wanted) {
        return stockOf(sku) >= wanted;
    }

    /** Reserves stock for an order, failing when not enough is on hand. */
    public boolean reserve(String sku, int wanted) {
        if (!isAvailable(sku, wanted)) {
            return false;
        }
        removeStock(sku, wanted);
        return true;
    }
}
